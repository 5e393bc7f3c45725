//! Label map + legend → detections.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::labelmap::{LabelMap, LabelMapError, Legend};
use crate::model::{mask_tight_box, Detection, DetectionKind, Mask};
use crate::par::Exec;
use crate::region::{decompose_stuff_with, DecompositionParams};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Format(#[from] LabelMapError),
    #[error("label map is {map_w}x{map_h} but the legend says {legend_w}x{legend_h}")]
    DimensionMismatch {
        map_w: u32,
        map_h: u32,
        legend_w: u32,
        legend_h: u32,
    },
    #[error("segment index {0} appears in the label map but not in the legend")]
    UnknownSegment(u32),
    #[error("segment {0} is in the legend but has no pixels")]
    EmptySegment(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub decomposition: DecompositionParams,
    /// When false, stuff segments keep their tight box until `decompose`.
    pub decompose: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            decomposition: DecompositionParams::default(),
            decompose: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub detections: Vec<Detection>,
    /// Per-segment remarks, e.g. a stuff segment with no valid configuration.
    pub notes: Vec<String>,
}

/// Splits a stuff detection's mask into boxes. Falls back to the tight box
/// when every decomposition attempt failed.
pub fn decompose_detection(det: &mut Detection, params: &DecompositionParams, exec: Exec) -> Option<String> {
    let mask = det.mask.as_ref()?;
    match decompose_stuff_with(mask, params, exec) {
        Ok(r) => {
            det.boxes = r.boxes;
            (!r.score.valid).then(|| {
                format!(
                    "segment {} ({}): no configuration met coverage/overflow; kept best (coverage {:.3}, overflow {:.3})",
                    det.segment, det.class_name, r.score.coverage, r.score.overflow
                )
            })
        }
        Err(e) => {
            det.boxes = vec![mask_tight_box(mask).expect("non-empty mask")];
            Some(format!(
                "segment {} ({}): {e}; kept tight box",
                det.segment, det.class_name
            ))
        }
    }
}

pub fn ingest_segmentation(
    map: &LabelMap,
    legend: &Legend,
    vocabulary: Option<&BTreeSet<String>>,
    options: &IngestOptions,
    exec: Exec,
) -> Result<Ingested, IngestError> {
    legend.check(vocabulary)?;
    if let (Some(lw), Some(lh)) = (legend.width, legend.height) {
        if (lw, lh) != (map.width, map.height) {
            return Err(IngestError::DimensionMismatch {
                map_w: map.width,
                map_h: map.height,
                legend_w: lw,
                legend_h: lh,
            });
        }
    }
    let segments = map.segments();
    if let Some(&idx) = segments.keys().find(|i| !legend.segments.contains_key(i)) {
        return Err(IngestError::UnknownSegment(idx));
    }
    if let Some(&idx) = legend.segments.keys().find(|i| !segments.contains_key(i)) {
        return Err(IngestError::EmptySegment(idx));
    }
    let mut detections: Vec<Detection> = segments
        .into_iter()
        .map(|(idx, pixels)| {
            let entry = &legend.segments[&idx];
            let mask = Mask::new(map.width, map.height, pixels).expect("pixels come from the map");
            Detection {
                class_name: entry.class_name.clone(),
                kind: entry.kind,
                score: entry.score,
                segment: idx,
                boxes: vec![mask_tight_box(&mask).expect("segment has pixels")],
                mask: Some(mask),
            }
        })
        .collect();
    let mut notes = Vec::new();
    if options.decompose {
        // Segments are the parallel unit; restarts inside run sequentially.
        let results = exec.map(&detections, |d| {
            let mut d = d.clone();
            let note = match d.kind {
                DetectionKind::Stuff => decompose_detection(&mut d, &options.decomposition, Exec::Sequential),
                DetectionKind::Thing => None,
            };
            (d, note)
        });
        detections = Vec::with_capacity(results.len());
        for (d, note) in results {
            detections.push(d);
            notes.extend(note);
        }
    }
    Ok(Ingested { detections, notes })
}
