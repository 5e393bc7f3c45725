//! Import of externally published caption datasets.
//!
//! Input is JSON Lines, one frame per line:
//!
//! ```json
//! {"id": "tt0120338_0042", "image": "images/tt0120338_0042.jpg",
//!  "width": 1280, "height": 536, "split": "test",
//!  "detections": [{"id": "person-0", "label": "person", "score": 0.98,
//!                  "kind": "thing", "box": [412, 80, 230, 456]}],
//!  "captions": [{"source": "auto", "text": "<gdo class=\"person\" person-0>A man</gdo> ..."}]}
//! ```
//!
//! `box` is `[x, y, w, h]` in pixels, or normalized to `[0, 1]` with
//! `BoxFormat::Normalized`. `split` accepts `train`, `eval` or `test`
//! (`test` maps to eval). `kind` defaults to `thing`. Object ids are kept as
//! given because captions refer to them; each detection becomes one object.
//! Frame ids must satisfy the store's id rule; the caption id is the source
//! name (`auto`, `human`, `model`).

use std::collections::BTreeSet;

use serde::Deserialize;

use super::{CaptionSource, FrameRecord, Store, StoreError};
use crate::markup::{is_object_id, validate_text};
use crate::model::{BBox, Detection, DetectionKind, Frame, SceneObject, Split};
use crate::ordering::{id_stem, order_permutation, OrderingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxFormat {
    #[default]
    Pixel,
    Normalized,
}

#[derive(Debug, Deserialize)]
struct ExtDetection {
    id: String,
    label: String,
    score: f64,
    #[serde(default)]
    kind: Option<DetectionKind>,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct ExtCaption {
    source: CaptionSource,
    text: String,
}

#[derive(Debug, Deserialize)]
struct ExtFrame {
    id: String,
    image: String,
    width: u32,
    height: u32,
    #[serde(default)]
    split: Option<String>,
    #[serde(default)]
    detections: Vec<ExtDetection>,
    #[serde(default)]
    captions: Vec<ExtCaption>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub frames_written: usize,
    pub frames_unchanged: usize,
    pub captions_written: usize,
    pub captions_unchanged: usize,
    /// `(line number, message)` for rejected lines and soft issues.
    pub problems: Vec<(usize, String)>,
    pub rejected: usize,
}

fn to_box(b: [f64; 4], fmt: BoxFormat, w: u32, h: u32) -> Result<BBox, String> {
    let [x, y, bw, bh] = match fmt {
        BoxFormat::Pixel => b,
        BoxFormat::Normalized => [
            b[0] * f64::from(w),
            b[1] * f64::from(h),
            b[2] * f64::from(w),
            b[3] * f64::from(h),
        ],
    };
    if [x, y, bw, bh].iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(format!("box {b:?} has negative or non-finite values"));
    }
    let (x0, y0) = (x.round() as u32, y.round() as u32);
    let (x1, y1) = ((x + bw).round() as u32, (y + bh).round() as u32);
    let bx = BBox::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0)).map_err(|e| format!("box {b:?}: {e}"))?;
    bx.check_in_frame(w, h).map_err(|e| e.to_string())?;
    Ok(bx)
}

fn convert(
    ext: ExtFrame,
    fmt: BoxFormat,
    problems: &mut Vec<String>,
) -> Result<(FrameRecord, Vec<ExtCaption>), String> {
    if !super::is_safe_id(&ext.id) {
        return Err(format!("frame id `{}` is not a valid store id", ext.id));
    }
    let split = match ext.split.as_deref() {
        None | Some("train") => Split::Train,
        Some("eval") | Some("test") => Split::Eval,
        Some(other) => return Err(format!("unknown split `{other}`")),
    };
    let mut seen = BTreeSet::new();
    let mut detections = Vec::new();
    let mut objects = Vec::new();
    for (i, d) in ext.detections.into_iter().enumerate() {
        if !is_object_id(&d.id) || !d.id.starts_with(&format!("{}-", id_stem(&d.label))) {
            return Err(format!("object id `{}` does not match class `{}`", d.id, d.label));
        }
        if !seen.insert(d.id.clone()) {
            return Err(format!("duplicate object id `{}`", d.id));
        }
        let bbox = to_box(d.bbox, fmt, ext.width, ext.height)?;
        detections.push(Detection {
            class_name: d.label.clone(),
            kind: d.kind.unwrap_or(DetectionKind::Thing),
            score: d.score,
            segment: i as u32 + 1,
            mask: None,
            boxes: vec![bbox],
        });
        objects.push(SceneObject {
            object_id: d.id,
            class_name: d.label,
            bbox,
            source_detection: i,
            score: d.score,
        });
    }
    let boxes: Vec<BBox> = objects.iter().map(|o| o.bbox).collect();
    let perm = order_permutation(&boxes, ext.height, OrderingParams::default().band_edges);
    let ordered: Vec<SceneObject> = perm.iter().map(|&i| objects[i].clone()).collect();
    // Ids are kept, but flag datasets whose numbering disagrees with band order.
    let mut next = std::collections::HashMap::new();
    for o in &ordered {
        let stem = id_stem(&o.class_name);
        let n = next.entry(stem.clone()).or_insert(0usize);
        if o.object_id != format!("{stem}-{n}") {
            problems.push(format!("object {} is out of reading order", o.object_id));
            break;
        }
        *n += 1;
    }
    let frame = Frame {
        frame_id: ext.id,
        width: ext.width,
        height: ext.height,
        image_ref: ext.image,
        objects: ordered,
        split,
    };
    Ok((
        FrameRecord {
            frame,
            detections,
            source: None,
        },
        ext.captions,
    ))
}

pub fn import_jsonl(store: &Store, text: &str, fmt: BoxFormat) -> Result<ImportReport, StoreError> {
    let mut report = ImportReport::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ext: ExtFrame = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) => {
                report.rejected += 1;
                report.problems.push((lineno, e.to_string()));
                continue;
            }
        };
        let mut soft = Vec::new();
        let (record, captions) = match convert(ext, fmt, &mut soft) {
            Ok(x) => x,
            Err(e) => {
                report.rejected += 1;
                report.problems.push((lineno, e));
                continue;
            }
        };
        report.problems.extend(soft.into_iter().map(|m| (lineno, m)));
        let fid = record.frame.frame_id.clone();
        let frame = record.frame.clone();
        match store.upsert_frame(&record)? {
            (_, true) => report.frames_written += 1,
            (_, false) => report.frames_unchanged += 1,
        }
        for c in captions {
            let (_, diag) = validate_text(&c.text, &frame);
            if !diag.syntax_errors.is_empty() {
                report.problems.push((
                    lineno,
                    format!("{} caption skipped: {}", c.source.name(), diag.syntax_errors[0]),
                ));
                continue;
            }
            if !diag.unknown_ids.is_empty() {
                report.problems.push((
                    lineno,
                    format!(
                        "{} caption references unknown ids {:?}",
                        c.source.name(),
                        diag.unknown_ids
                    ),
                ));
            }
            match store.put_caption_text(&fid, c.source.name(), c.source, &c.text, None)? {
                (_, true) => report.captions_written += 1,
                (_, false) => report.captions_unchanged += 1,
            }
        }
    }
    Ok(report)
}
