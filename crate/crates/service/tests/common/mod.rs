#![allow(dead_code)]

use std::path::Path;

use groundcap_core::model::{BBox, Detection, DetectionKind, Frame, SceneObject, Split};
use groundcap_core::store::{CaptionSource, FrameRecord, Store};
use groundcap_service::{RaterConfig, ServiceConfig, Workflow};

pub const AUTO_TEXT: &str = "<gdo class=\"person\" person-0>A man</gdo> waves at <gdo class=\"car\" car-0>a car</gdo>.";
pub const FULL_TEXT: &str =
    "<gdo class=\"person\" person-0 person-1>Two people</gdo> wave at <gdo class=\"car\" car-0>a car</gdo>.";

pub fn frame_record(fid: &str, split: Split) -> FrameRecord {
    let objects = [
        ("person-0", "person", (1, 1, 4, 8)),
        ("person-1", "person", (7, 1, 4, 8)),
        ("car-0", "car", (2, 12, 12, 6)),
    ];
    let mut dets = Vec::new();
    let mut objs = Vec::new();
    for (i, (id, class, (x, y, w, h))) in objects.into_iter().enumerate() {
        let b = BBox::new(x, y, w, h).unwrap();
        dets.push(Detection {
            class_name: class.into(),
            kind: DetectionKind::Thing,
            score: 0.9,
            segment: i as u32 + 1,
            mask: None,
            boxes: vec![b],
        });
        objs.push(SceneObject {
            object_id: id.into(),
            class_name: class.into(),
            bbox: b,
            source_detection: i,
            score: 0.9,
        });
    }
    FrameRecord {
        frame: Frame {
            frame_id: fid.into(),
            width: 16,
            height: 20,
            image_ref: format!("images/{fid}.png"),
            objects: objs,
            split,
        },
        detections: dets,
        source: None,
    }
}

/// A 16x20 RGB test image whose pixel (x, y) is (x*10, y*10, x+y).
pub fn write_image(root: &Path, fid: &str) {
    let img = image::RgbImage::from_fn(16, 20, |x, y| {
        image::Rgb([(x * 10) as u8, (y * 10) as u8, (x + y) as u8])
    });
    std::fs::create_dir_all(root.join("images")).unwrap();
    img.save(root.join(format!("images/{fid}.png"))).unwrap();
}

pub fn config(root: &Path, raters: &[&str], seed: u64) -> ServiceConfig {
    ServiceConfig {
        store: root.to_path_buf(),
        bind: "127.0.0.1:0".into(),
        study_seed: seed,
        ratings_per_caption: 3,
        raters: raters
            .iter()
            .map(|r| RaterConfig {
                id: r.to_string(),
                token: format!("token-{r}-secret"),
            })
            .collect(),
    }
}

/// A store with `frames` frames, each holding one auto caption.
pub fn seeded(root: &Path, frames: usize) -> Store {
    let store = Store::open(root).unwrap();
    for i in 0..frames {
        let fid = format!("f{i:03}");
        store.save_frame(&frame_record(&fid, Split::Eval), 0).unwrap();
        store
            .put_caption_text(&fid, "auto", CaptionSource::Auto, AUTO_TEXT, None)
            .unwrap();
        write_image(root, &fid);
    }
    store
}

pub fn workflow(root: &Path, raters: &[&str]) -> Workflow {
    Workflow::new(&config(root, raters, 7)).unwrap()
}
