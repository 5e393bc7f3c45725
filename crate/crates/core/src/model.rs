//! Domain types shared across the toolkit: boxes, masks, detections and frames.
//!
//! Boxes use integer pixels with half-open extents: a box covers
//! `[x, x + w) × [y, y + h)`. Two boxes that only share an edge do not overlap.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("box has zero extent ({w}x{h})")]
    EmptyBox { w: u32, h: u32 },
    #[error("box ({x},{y},{w},{h}) exceeds frame {width}x{height}")]
    OutOfFrame {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("mask has no pixels")]
    EmptyMask,
    #[error("pixel ({x},{y}) outside mask bounds {width}x{height}")]
    PixelOutOfRange { x: u32, y: u32, width: u32, height: u32 },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("thing detection must carry exactly one box, got {0}")]
    ThingBoxCount(usize),
    #[error("stuff detection must carry 1 to 6 boxes, got {0}")]
    StuffBoxCount(usize),
}

/// Axis-aligned integer box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self, ModelError> {
        if w == 0 || h == 0 {
            return Err(ModelError::EmptyBox { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Box spanning the inclusive pixel range `[x0, x1] × [y0, y1]`.
    pub fn from_inclusive(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x0 <= x1 && y0 <= y1);
        Self {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn contains_pixel(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn check_in_frame(&self, width: u32, height: u32) -> Result<(), ModelError> {
        if self.w == 0 || self.h == 0 {
            return Err(ModelError::EmptyBox { w: self.w, h: self.h });
        }
        if !self.fits_in(width, height) {
            return Err(ModelError::OutOfFrame {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                width,
                height,
            });
        }
        Ok(())
    }

    /// Normalized `(x, y, w, h)` relative to the frame size.
    pub fn normalized(&self, width: u32, height: u32) -> [f64; 4] {
        let (fw, fh) = (f64::from(width), f64::from(height));
        [
            f64::from(self.x) / fw,
            f64::from(self.y) / fh,
            f64::from(self.w) / fw,
            f64::from(self.h) / fh,
        ]
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        box_intersection(self, other)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x, self.y, self.w, self.h)
    }
}

/// Largest box contained in both inputs, or `None` when they share no pixel.
pub fn box_intersection(a: &BBox, b: &BBox) -> Option<BBox> {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = a.right().min(b.right());
    let y1 = a.bottom().min(b.bottom());
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Some(BBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    })
}

/// Pixel set of one segment. Pixels are kept sorted row-major and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    pixels: Vec<(u32, u32)>,
}

impl Mask {
    pub fn new(width: u32, height: u32, pixels: impl IntoIterator<Item = (u32, u32)>) -> Result<Self, ModelError> {
        let set: BTreeSet<(u32, u32)> = pixels.into_iter().map(|(x, y)| (y, x)).collect();
        let mut out = Vec::with_capacity(set.len());
        for (y, x) in set {
            if x >= width || y >= height {
                return Err(ModelError::PixelOutOfRange { x, y, width, height });
            }
            out.push((x, y));
        }
        Ok(Self {
            width,
            height,
            pixels: out,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.pixels.binary_search_by(|&(px, py)| (py, px).cmp(&(y, x))).is_ok()
    }
}

/// Smallest box enclosing every pixel of the mask.
pub fn mask_tight_box(mask: &Mask) -> Result<BBox, ModelError> {
    let first = mask.pixels.first().ok_or(ModelError::EmptyMask)?;
    let (mut x0, mut y0, mut x1, mut y1) = (first.0, first.1, first.0, first.1);
    for &(x, y) in &mask.pixels {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    Ok(BBox::from_inclusive(x0, y0, x1, y1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionKind {
    Thing,
    Stuff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_name: String,
    pub kind: DetectionKind,
    pub score: f64,
    /// Segment index in the source label map.
    pub segment: u32,
    #[serde(skip)]
    pub mask: Option<Mask>,
    pub boxes: Vec<BBox>,
}

impl Detection {
    pub fn check(&self, width: u32, height: u32) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(ModelError::ScoreOutOfRange(self.score));
        }
        match self.kind {
            DetectionKind::Thing if self.boxes.len() != 1 => return Err(ModelError::ThingBoxCount(self.boxes.len())),
            DetectionKind::Stuff if !(1..=6).contains(&self.boxes.len()) => {
                return Err(ModelError::StuffBoxCount(self.boxes.len()))
            }
            _ => {}
        }
        self.boxes.iter().try_for_each(|b| b.check_in_frame(width, height))
    }
}

/// An identity-bearing grounded unit such as `person-1`, one box each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: String,
    pub class_name: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub source_detection: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(format!("unknown split `{other}` (expected train or eval)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub image_ref: String,
    pub objects: Vec<SceneObject>,
    pub split: Split,
}

impl Frame {
    pub fn object(&self, object_id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn object_ids(&self) -> BTreeSet<String> {
        self.objects.iter().map(|o| o.object_id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn intersection_examples() {
        assert_eq!(
            box_intersection(&b(0, 0, 10, 10), &b(5, 5, 10, 10)),
            Some(b(5, 5, 5, 5))
        );
        assert_eq!(box_intersection(&b(0, 0, 4, 4), &b(4, 0, 4, 4)), None);
        assert_eq!(box_intersection(&b(2, 2, 6, 6), &b(2, 2, 6, 6)), Some(b(2, 2, 6, 6)));
    }

    #[test]
    fn tight_box_examples() {
        let m = Mask::new(10, 10, [(3, 4)]).unwrap();
        assert_eq!(mask_tight_box(&m).unwrap(), b(3, 4, 1, 1));
        let m = Mask::new(10, 10, [(1, 1), (5, 9)]).unwrap();
        assert_eq!(mask_tight_box(&m).unwrap(), b(1, 1, 5, 9));
        let m = Mask::new(10, 10, []).unwrap();
        assert_eq!(mask_tight_box(&m), Err(ModelError::EmptyMask));
    }

    #[test]
    fn tight_box_matches_scan_on_random_mask() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<(u32, u32)> = (0..50)
            .map(|_| (rng.random_range(0..64), rng.random_range(0..48)))
            .collect();
        let m = Mask::new(64, 48, pts.iter().copied()).unwrap();
        // Exhaustive scan over the full grid.
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..48 {
            for x in 0..64 {
                if pts.contains(&(x, y)) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        assert_eq!(mask_tight_box(&m).unwrap(), b(x0, y0, x1 - x0 + 1, y1 - y0 + 1));
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(BBox::new(0, 0, 0, 3).is_err());
        assert!(Mask::new(4, 4, [(4, 0)]).is_err());
        assert!(b(2, 2, 3, 3).check_in_frame(4, 4).is_err());
        let n = b(10, 20, 30, 40).normalized(100, 200);
        assert_eq!(n, [0.1, 0.1, 0.3, 0.2]);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..40, 0u32..40, 1u32..30, 1u32..30).prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn intersection_laws(a in arb_box(), c in arb_box()) {
            let ac = box_intersection(&a, &c);
            prop_assert_eq!(ac, box_intersection(&c, &a));
            prop_assert_eq!(box_intersection(&a, &a), Some(a));
            let area = ac.map_or(0, |r| r.area());
            prop_assert!(area <= a.area().min(c.area()));
            // Pixel count oracle.
            let mut shared = 0u64;
            for y in 0..80 {
                for x in 0..80 {
                    if a.contains_pixel(x, y) && c.contains_pixel(x, y) {
                        shared += 1;
                    }
                }
            }
            prop_assert_eq!(area, shared);
        }

        #[test]
        fn tight_box_is_minimal(pts in prop::collection::vec((0u32..30, 0u32..30), 1..40)) {
            let m = Mask::new(30, 30, pts.iter().copied()).unwrap();
            let t = mask_tight_box(&m).unwrap();
            for &(x, y) in m.pixels() {
                prop_assert!(t.contains_pixel(x, y));
            }
            // Shrinking any side by one excludes a pixel.
            prop_assert!(m.pixels().iter().any(|&(x, _)| x == t.x));
            prop_assert!(m.pixels().iter().any(|&(x, _)| x == t.right() - 1));
            prop_assert!(m.pixels().iter().any(|&(_, y)| y == t.y));
            prop_assert!(m.pixels().iter().any(|&(_, y)| y == t.bottom() - 1));
        }
    }
}
