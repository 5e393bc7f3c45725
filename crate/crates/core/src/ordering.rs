//! Detection filtering, reading-order sorting and per-class id assignment.
//!
//! Objects are read like text: three horizontal bands top to bottom, then
//! left to right inside a band. Ids count per class in that order, so
//! `person-0` always precedes `person-1`.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{BBox, Detection, SceneObject};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingParams {
    pub min_score: f64,
    pub max_detections: usize,
    /// Upper edges of the top and middle bands on normalized y.
    pub band_edges: (f64, f64),
}

impl Default for OrderingParams {
    fn default() -> Self {
        Self {
            min_score: 0.7,
            max_detections: 40,
            band_edges: (0.33, 0.66),
        }
    }
}

impl OrderingParams {
    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.band_edges;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(format!("band edges must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"));
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(format!("min_score {} outside [0, 1]", self.min_score));
        }
        Ok(())
    }
}

/// Indices of the detections that survive filtering, highest score first
/// (ties keep input order).
pub fn filter_indices(dets: &[Detection], params: &OrderingParams) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= params.min_score).collect();
    keep.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    keep.truncate(params.max_detections);
    keep
}

pub fn filter_detections(dets: &[Detection], params: &OrderingParams) -> Vec<Detection> {
    filter_indices(dets, params)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

/// Band of the box centre; a centre exactly on an edge belongs to the upper band.
pub fn band_of(b: &BBox, frame_height: u32, edges: (f64, f64)) -> usize {
    let cy = (2.0 * f64::from(b.y) + f64::from(b.h)) / (2.0 * f64::from(frame_height));
    if cy <= edges.0 {
        0
    } else if cy <= edges.1 {
        1
    } else {
        2
    }
}

/// Reading-order key: band, left edge, doubled centre x, input index.
fn order_key(b: &BBox, index: usize, frame_height: u32, edges: (f64, f64)) -> (usize, u32, u64, usize) {
    (
        band_of(b, frame_height, edges),
        b.x,
        2 * u64::from(b.x) + u64::from(b.w),
        index,
    )
}

pub fn compare_reading_order(a: (&BBox, usize), b: (&BBox, usize), frame_height: u32, edges: (f64, f64)) -> Ordering {
    order_key(a.0, a.1, frame_height, edges).cmp(&order_key(b.0, b.1, frame_height, edges))
}

/// Returns the permutation that puts `boxes` in reading order.
pub fn order_permutation(boxes: &[BBox], frame_height: u32, edges: (f64, f64)) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..boxes.len()).collect();
    idx.sort_by_key(|&i| order_key(&boxes[i], i, frame_height, edges));
    idx
}

pub fn order_objects<T: Clone>(objects: &[(T, BBox)], frame_height: u32, params: &OrderingParams) -> Vec<(T, BBox)> {
    let boxes: Vec<BBox> = objects.iter().map(|o| o.1).collect();
    order_permutation(&boxes, frame_height, params.band_edges)
        .into_iter()
        .map(|i| objects[i].clone())
        .collect()
}

/// Lowercase id stem for a class name: whitespace and underscores become `-`.
pub fn id_stem(class_name: &str) -> String {
    class_name
        .trim()
        .chars()
        .map(|c| {
            if c.is_whitespace() || c == '_' {
                '-'
            } else {
                c.to_ascii_lowercase()
            }
        })
        .filter(|c| c.is_ascii_lowercase() || *c == '-')
        .collect()
}

/// An object ready for id assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Placed {
    pub class_name: String,
    pub bbox: BBox,
    pub source_detection: usize,
    pub score: f64,
}

/// Per-class counters from 0 in the given (already ordered) sequence.
pub fn assign_ids(ordered: &[Placed]) -> Vec<SceneObject> {
    let mut counters: HashMap<String, usize> = HashMap::new();
    ordered
        .iter()
        .map(|p| {
            let stem = id_stem(&p.class_name);
            let n = counters.entry(stem.clone()).or_insert(0);
            let object_id = format!("{stem}-{n}");
            *n += 1;
            SceneObject {
                object_id,
                class_name: p.class_name.clone(),
                bbox: p.bbox,
                source_detection: p.source_detection,
                score: p.score,
            }
        })
        .collect()
}

/// Filter, expand stuff boxes into separate objects, order and assign ids.
pub fn build_scene(dets: &[Detection], frame_height: u32, params: &OrderingParams) -> Vec<SceneObject> {
    let placed: Vec<Placed> = filter_indices(dets, params)
        .into_iter()
        .flat_map(|i| {
            let d = &dets[i];
            d.boxes.iter().map(move |&bbox| Placed {
                class_name: d.class_name.clone(),
                bbox,
                source_detection: i,
                score: d.score,
            })
        })
        .collect();
    let boxes: Vec<BBox> = placed.iter().map(|p| p.bbox).collect();
    let ordered: Vec<Placed> = order_permutation(&boxes, frame_height, params.band_edges)
        .into_iter()
        .map(|i| placed[i].clone())
        .collect();
    assign_ids(&ordered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DetectionKind;
    use proptest::prelude::*;

    fn det(class: &str, score: f64, boxes: Vec<BBox>) -> Detection {
        Detection {
            class_name: class.into(),
            kind: if boxes.len() == 1 {
                DetectionKind::Thing
            } else {
                DetectionKind::Stuff
            },
            score,
            segment: 0,
            mask: None,
            boxes,
        }
    }

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn filter_examples() {
        let dets = vec![det("a", 0.9, vec![b(0, 0, 1, 1)]), det("b", 0.6, vec![b(0, 0, 1, 1)])];
        let kept = filter_detections(&dets, &OrderingParams::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].class_name, "a");
        assert!(filter_detections(&[], &OrderingParams::default()).is_empty());
        // Exactly at threshold survives.
        assert_eq!(
            filter_indices(&[det("a", 0.7, vec![b(0, 0, 1, 1)])], &OrderingParams::default()),
            [0]
        );
    }

    #[test]
    fn filter_ties_keep_input_order() {
        let dets: Vec<Detection> = (0..45)
            .map(|i| det(&format!("c{i}"), 0.8, vec![b(0, 0, 1, 1)]))
            .collect();
        let kept = filter_indices(&dets, &OrderingParams::default());
        let mut oracle: Vec<usize> = (0..45).collect();
        oracle.sort_by(|a, b| dets[*b].score.partial_cmp(&dets[*a].score).unwrap().then(a.cmp(b)));
        assert_eq!(kept, oracle[..40]);
        assert_eq!(kept, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn reading_order_example() {
        // Frame 100x100; centres (0.1,0.1), (0.9,0.1), (0.1,0.5) given out of order.
        let objs = vec![
            ("mid-left", b(5, 45, 10, 10)),
            ("top-right", b(85, 5, 10, 10)),
            ("top-left", b(5, 5, 10, 10)),
        ];
        let ordered = order_objects(&objs, 100, &OrderingParams::default());
        let names: Vec<_> = ordered.iter().map(|o| o.0).collect();
        assert_eq!(names, ["top-left", "top-right", "mid-left"]);
        let single = order_objects(&objs[..1], 100, &OrderingParams::default());
        assert_eq!(single, objs[..1]);
    }

    #[test]
    fn same_left_edge_orders_by_centre() {
        let objs = vec![("wide", b(10, 10, 30, 5)), ("narrow", b(10, 12, 4, 5))];
        let ordered = order_objects(&objs, 100, &OrderingParams::default());
        assert_eq!(ordered[0].0, "narrow");
    }

    #[test]
    fn edge_centres_go_to_upper_band() {
        // Centre y = 33/100 exactly.
        assert_eq!(band_of(&b(0, 32, 1, 2), 100, (0.33, 0.66)), 0);
        assert_eq!(band_of(&b(0, 33, 1, 2), 100, (0.33, 0.66)), 1);
        assert_eq!(band_of(&b(0, 65, 1, 2), 100, (0.33, 0.66)), 1);
        assert_eq!(band_of(&b(0, 99, 1, 1), 100, (0.33, 0.66)), 2);
    }

    #[test]
    fn ids_count_per_class() {
        let placed: Vec<Placed> = ["person", "car", "person"]
            .iter()
            .enumerate()
            .map(|(i, c)| Placed {
                class_name: c.to_string(),
                bbox: b(i as u32, 0, 1, 1),
                source_detection: i,
                score: 1.0,
            })
            .collect();
        let ids: Vec<_> = assign_ids(&placed).into_iter().map(|o| o.object_id).collect();
        assert_eq!(ids, ["person-0", "car-0", "person-1"]);
        assert_eq!(id_stem("dining table"), "dining-table");
        assert_eq!(id_stem("wall-other-merged"), "wall-other-merged");
    }

    #[test]
    fn figure_like_scene() {
        // A bald man at left, another person at the right edge, walls split in three.
        let dets = vec![
            det("person", 0.95, vec![b(560, 100, 60, 300)]),
            det("person", 0.98, vec![b(120, 80, 200, 320)]),
            det(
                "wall",
                0.9,
                vec![b(0, 0, 100, 150), b(400, 0, 240, 90), b(0, 300, 90, 180)],
            ),
            det("window", 0.85, vec![b(420, 100, 80, 60)]),
            det("chair", 0.5, vec![b(10, 400, 40, 40)]),
        ];
        let objs = build_scene(&dets, 480, &OrderingParams::default());
        let find = |id: &str| objs.iter().find(|o| o.object_id == id).unwrap();
        assert_eq!(find("person-0").bbox.x, 120);
        assert_eq!(find("person-1").bbox.x, 560);
        assert_eq!(objs.iter().filter(|o| o.class_name == "wall").count(), 3);
        assert!(objs.iter().all(|o| o.class_name != "chair"));
    }

    fn arb_det() -> impl Strategy<Value = Detection> {
        (
            prop::sample::select(vec!["person", "car", "wall", "tree"]),
            0.0f64..1.0,
            prop::collection::vec((0u32..180, 0u32..100, 1u32..20, 1u32..20), 1..4),
        )
            .prop_map(|(c, s, bs)| det(c, s, bs.into_iter().map(|(x, y, w, h)| b(x, y, w, h)).collect()))
    }

    proptest! {
        #[test]
        fn ids_follow_reading_order(dets in prop::collection::vec(arb_det(), 0..50)) {
            let p = OrderingParams::default();
            let objs = build_scene(&dets, 120, &p);
            let kept = filter_indices(&dets, &p);
            prop_assert!(kept.len() <= 40);
            prop_assert!(kept.iter().all(|&i| dets[i].score >= 0.7));
            for (i, a) in objs.iter().enumerate() {
                for c in objs.iter().skip(i + 1) {
                    if a.class_name == c.class_name {
                        let na: usize = a.object_id.rsplit('-').next().unwrap().parse().unwrap();
                        let nc: usize = c.object_id.rsplit('-').next().unwrap().parse().unwrap();
                        prop_assert!(na < nc);
                        let ka = (band_of(&a.bbox, 120, p.band_edges), a.bbox.x);
                        let kc = (band_of(&c.bbox, 120, p.band_edges), c.bbox.x);
                        prop_assert!(ka <= kc);
                    }
                }
            }
        }

        #[test]
        fn filtering_is_idempotent(dets in prop::collection::vec(arb_det(), 0..60)) {
            let p = OrderingParams::default();
            let once = filter_detections(&dets, &p);
            prop_assert_eq!(filter_detections(&once, &p), once);
        }

        #[test]
        fn reading_order_is_total(boxes in prop::collection::vec((0u32..50, 0u32..50, 1u32..10, 1u32..10), 1..12)) {
            let bs: Vec<BBox> = boxes.into_iter().map(|(x, y, w, h)| b(x, y, w, h)).collect();
            let e = (0.33, 0.66);
            for i in 0..bs.len() {
                for j in 0..bs.len() {
                    let ij = compare_reading_order((&bs[i], i), (&bs[j], j), 60, e);
                    let ji = compare_reading_order((&bs[j], j), (&bs[i], i), 60, e);
                    prop_assert_eq!(ij, ji.reverse());
                    prop_assert_eq!(ij == Ordering::Equal, i == j);
                    for k in 0..bs.len() {
                        let jk = compare_reading_order((&bs[j], j), (&bs[k], k), 60, e);
                        if ij == Ordering::Less && jk == Ordering::Less {
                            prop_assert_eq!(compare_reading_order((&bs[i], i), (&bs[k], k), 60, e), Ordering::Less);
                        }
                    }
                }
            }
        }
    }
}
