//! Box decomposition for amorphous ("stuff") segments.
//!
//! A stuff mask is clustered with k-means for increasing `k`; each cluster is
//! boxed by the percentile range of its coordinates, overlapping boxes are
//! shrunk apart, and the configuration is scored by coverage minus overflow.
//! The first `k` with a valid configuration wins.

pub mod kmeans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BBox, Mask};
use crate::par::Exec;

pub use kmeans::{kmeans, KMeansOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum DecomposeError {
    #[error("cannot decompose an empty mask")]
    EmptyMask,
    #[error("invalid decomposition parameters: {0}")]
    InvalidParams(String),
    #[error("overlaps still unresolved after {0} iterations")]
    Unresolved(usize),
    #[error("boxes {0} and {1} cannot be separated without collapsing one of them")]
    Degenerate(usize, usize),
    #[error("every decomposition attempt failed; last error: {0}")]
    AllAttemptsFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionParams {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts_per_k: usize,
    pub min_coverage: f64,
    pub max_overflow: f64,
    pub percentile_lo: f64,
    pub percentile_hi: f64,
    pub base_seed: u64,
}

impl Default for DecompositionParams {
    fn default() -> Self {
        Self {
            k_min: 1,
            k_max: 6,
            restarts_per_k: 10,
            min_coverage: 0.90,
            max_overflow: 0.30,
            percentile_lo: 0.05,
            percentile_hi: 0.95,
            base_seed: 0,
        }
    }
}

impl DecompositionParams {
    pub fn validate(&self) -> Result<(), DecomposeError> {
        let bad = |m: &str| Err(DecomposeError::InvalidParams(m.to_owned()));
        if self.k_min < 1 || self.k_min > self.k_max {
            return bad("need 1 <= k_min <= k_max");
        }
        if self.k_max > 6 {
            return bad("k_max may not exceed 6");
        }
        if self.restarts_per_k == 0 {
            return bad("restarts_per_k must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_coverage) || !(0.0..=1.0).contains(&self.max_overflow) {
            return bad("coverage and overflow thresholds must lie in [0, 1]");
        }
        if !(0.0 <= self.percentile_lo && self.percentile_lo < self.percentile_hi && self.percentile_hi <= 1.0) {
            return bad("need 0 <= percentile_lo < percentile_hi <= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub coverage: f64,
    pub overflow: f64,
    pub score: f64,
    pub valid: bool,
}

/// 0-based nearest-rank index `floor(p * n)`, clamped to the last element.
pub fn nearest_rank_index(p: f64, n: usize) -> usize {
    // The epsilon absorbs binary representation error, e.g. 0.95 * 100.
    let idx = (p * n as f64 + 1e-9).floor() as usize;
    idx.min(n - 1)
}

/// Box over the `[lo, hi]` percentile range of the cluster's x and y
/// coordinates, inclusive on both ends.
pub fn percentile_box(cluster: &[(u32, u32)], lo: f64, hi: f64) -> BBox {
    assert!(!cluster.is_empty(), "percentile box of an empty cluster");
    let mut xs: Vec<u32> = cluster.iter().map(|p| p.0).collect();
    let mut ys: Vec<u32> = cluster.iter().map(|p| p.1).collect();
    xs.sort_unstable();
    ys.sort_unstable();
    let n = cluster.len();
    let (ilo, ihi) = (nearest_rank_index(lo, n), nearest_rank_index(hi, n));
    BBox::from_inclusive(xs[ilo], ys[ilo], xs[ihi], ys[ihi])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// One pairwise separation step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMove {
    pub first: usize,
    pub second: usize,
    pub axis: Axis,
    /// Total edge movement needed to separate the pair on `axis`.
    pub required: u32,
    pub move_first: u32,
    pub move_second: u32,
    /// Which of (first, second) hit the 1 px floor.
    pub clamped: (bool, bool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Elimination {
    pub boxes: Vec<BBox>,
    /// Boxes that hit the 1 px floor and could not take their full share.
    pub clamped: Vec<bool>,
    pub moves: Vec<PairMove>,
}

pub const MAX_OVERLAP_ITERATIONS: usize = 100;

fn span(b: &BBox, axis: Axis) -> (u32, u32) {
    match axis {
        Axis::Horizontal => (b.x, b.right()),
        Axis::Vertical => (b.y, b.bottom()),
    }
}

fn set_span(b: &mut BBox, axis: Axis, start: u32, end: u32) {
    match axis {
        Axis::Horizontal => {
            b.x = start;
            b.w = end - start;
        }
        Axis::Vertical => {
            b.y = start;
            b.h = end - start;
        }
    }
}

/// Separates boxes `i < j` along `axis`. Returns `None` when that would
/// collapse a box below 1 px.
fn separate(boxes: &mut [BBox], i: usize, j: usize, axis: Axis) -> Option<PairMove> {
    let (a0, a1) = span(&boxes[i], axis);
    let (b0, b1) = span(&boxes[j], axis);
    // Decide which box ends up on the low side.
    let i_first = if (a0, a1) == (b0, b1) {
        true
    } else if a0 <= b0 && a1 >= b1 {
        // j inside i: j moves toward whichever outer edge is nearer.
        !(b0 - a0 <= a1 - b1)
    } else if b0 <= a0 && b1 >= a1 {
        a0 - b0 <= b1 - a1
    } else {
        a0 < b0
    };
    let (f, s) = if i_first { (i, j) } else { (j, i) };
    let (f0, f1) = span(&boxes[f], axis);
    let (s0, s1) = span(&boxes[s], axis);
    let required = f1 - s0;
    let (size_f, size_s) = (u64::from(f1 - f0), u64::from(s1 - s0));
    let total = size_f + size_s;

    // The larger box takes the ceiling of its proportional share; ties go to
    // the lower index.
    let f_is_larger = size_f > size_s || (size_f == size_s && f < s);
    let large = if f_is_larger { size_f } else { size_s };
    let large_move = ((u64::from(required) * large).div_ceil(total)) as u32;
    let small_move = required - large_move;
    let (mut move_f, mut move_s) = if f_is_larger {
        (large_move, small_move)
    } else {
        (small_move, large_move)
    };

    let mut clamped = (false, false);
    let (cap_f, cap_s) = ((size_f - 1) as u32, (size_s - 1) as u32);
    if move_f > cap_f {
        move_f = cap_f;
        move_s = required - move_f;
        clamped.0 = true;
    }
    if move_s > cap_s {
        move_s = cap_s;
        move_f = required.checked_sub(move_s)?;
        clamped.1 = true;
    }
    if move_f > cap_f || move_s > cap_s {
        return None;
    }
    set_span(&mut boxes[f], axis, f0, f1 - move_f);
    set_span(&mut boxes[s], axis, s0 + move_s, s1);
    Some(PairMove {
        first: f,
        second: s,
        axis,
        required,
        move_first: move_f,
        move_second: move_s,
        clamped,
    })
}

/// Shrinks boxes until no two overlap. Each iteration separates the pair
/// with the largest overlap area (ties: lowest index pair) along the axis
/// whose overlap is proportionally smaller, splitting the edge movement in
/// proportion to the boxes' extents on that axis.
pub fn eliminate_overlaps(input: &[BBox]) -> Result<Elimination, DecomposeError> {
    let mut boxes = input.to_vec();
    let mut clamped = vec![false; boxes.len()];
    let mut moves = Vec::new();
    for _ in 0..MAX_OVERLAP_ITERATIONS {
        let mut worst: Option<(u64, usize, usize, BBox)> = None;
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if let Some(ov) = boxes[i].intersection(&boxes[j]) {
                    if worst.is_none_or(|(area, ..)| ov.area() > area) {
                        worst = Some((ov.area(), i, j, ov));
                    }
                }
            }
        }
        let Some((_, i, j, ov)) = worst else {
            return Ok(Elimination { boxes, clamped, moves });
        };
        let (a, b) = (boxes[i], boxes[j]);
        // ov.w / (a.w + b.w) < ov.h / (a.h + b.h), cross-multiplied.
        let horizontal = u64::from(ov.w) * u64::from(a.h + b.h) < u64::from(ov.h) * u64::from(a.w + b.w);
        let (primary, fallback) = if horizontal {
            (Axis::Horizontal, Axis::Vertical)
        } else {
            (Axis::Vertical, Axis::Horizontal)
        };
        let mv = separate(&mut boxes, i, j, primary)
            .or_else(|| separate(&mut boxes, i, j, fallback))
            .ok_or(DecomposeError::Degenerate(i, j))?;
        clamped[mv.first] |= mv.clamped.0;
        clamped[mv.second] |= mv.clamped.1;
        moves.push(mv);
    }
    Err(DecomposeError::Unresolved(MAX_OVERLAP_ITERATIONS))
}

/// Area of the union of `boxes`, computed on the compressed edge grid.
pub fn union_area(boxes: &[BBox]) -> u64 {
    let mut xs: Vec<u32> = boxes.iter().flat_map(|b| [b.x, b.right()]).collect();
    let mut ys: Vec<u32> = boxes.iter().flat_map(|b| [b.y, b.bottom()]).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let mut area = 0u64;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            if boxes.iter().any(|b| b.contains_pixel(xw[0], yw[0])) {
                area += u64::from(xw[1] - xw[0]) * u64::from(yw[1] - yw[0]);
            }
        }
    }
    area
}

pub fn score_config(boxes: &[BBox], mask: &Mask, params: &DecompositionParams) -> ConfigScore {
    let union = union_area(boxes);
    if union == 0 || mask.is_empty() {
        return ConfigScore {
            coverage: 0.0,
            overflow: 0.0,
            score: 0.0,
            valid: false,
        };
    }
    let inside = mask
        .pixels()
        .iter()
        .filter(|&&(x, y)| boxes.iter().any(|b| b.contains_pixel(x, y)))
        .count() as u64;
    let coverage = inside as f64 / mask.len() as f64;
    let overflow = (union - inside) as f64 / union as f64;
    ConfigScore {
        coverage,
        overflow,
        score: coverage - overflow,
        valid: coverage >= params.min_coverage && overflow <= params.max_overflow,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of restart `attempt` at cluster count `k`.
pub fn attempt_seed(base_seed: u64, k: usize, attempt: usize) -> u64 {
    base_seed ^ splitmix64(((k as u64) << 32) | attempt as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub k: usize,
    pub attempt: usize,
    pub seed: u64,
    pub result: Result<(Vec<BBox>, ConfigScore), String>,
}

impl Attempt {
    pub fn score(&self) -> Option<&ConfigScore> {
        self.result.as_ref().ok().map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub boxes: Vec<BBox>,
    pub k_used: usize,
    pub score: ConfigScore,
    pub attempts_made: usize,
    pub attempts: Vec<Attempt>,
}

fn run_attempt(mask: &Mask, points: &[[f64; 2]], params: &DecompositionParams, k: usize, attempt: usize) -> Attempt {
    let seed = attempt_seed(params.base_seed, k, attempt);
    let km = kmeans(points, k, seed);
    let clusters = km.clusters(mask.pixels());
    let initial: Vec<BBox> = clusters
        .iter()
        .map(|c| percentile_box(c, params.percentile_lo, params.percentile_hi))
        .collect();
    let result = eliminate_overlaps(&initial)
        .map(|e| {
            let score = score_config(&e.boxes, mask, params);
            (e.boxes, score)
        })
        .map_err(|e| e.to_string());
    Attempt {
        k,
        attempt,
        seed,
        result,
    }
}

/// Best attempt by score; earlier attempts win ties.
fn best_of<'a>(attempts: impl Iterator<Item = &'a Attempt>, valid_only: bool) -> Option<&'a Attempt> {
    let mut best: Option<&Attempt> = None;
    for a in attempts {
        let Some(s) = a.score() else { continue };
        if valid_only && !s.valid {
            continue;
        }
        if best.is_none_or(|b| s.score > b.score().unwrap().score) {
            best = Some(a);
        }
    }
    best
}

pub fn decompose_stuff(mask: &Mask, params: &DecompositionParams) -> Result<DecompositionResult, DecomposeError> {
    decompose_stuff_with(mask, params, Exec::default())
}

pub fn decompose_stuff_with(
    mask: &Mask,
    params: &DecompositionParams,
    exec: Exec,
) -> Result<DecompositionResult, DecomposeError> {
    params.validate()?;
    if mask.is_empty() {
        return Err(DecomposeError::EmptyMask);
    }
    let points: Vec<[f64; 2]> = mask
        .pixels()
        .iter()
        .map(|&(x, y)| [f64::from(x), f64::from(y)])
        .collect();
    let restarts: Vec<usize> = (0..params.restarts_per_k).collect();
    let mut log: Vec<Attempt> = Vec::new();

    for k in params.k_min..=params.k_max {
        let batch = exec.map(&restarts, |&a| run_attempt(mask, &points, params, k, a));
        log.extend(batch);
        let this_k = log.iter().filter(|a| a.k == k);
        if let Some(best) = best_of(this_k, true) {
            return Ok(finish(best, log.clone()));
        }
    }
    match best_of(log.iter(), false) {
        Some(best) => Ok(finish(best, log.clone())),
        None => Err(DecomposeError::AllAttemptsFailed(
            log.last().and_then(|a| a.result.clone().err()).unwrap_or_default(),
        )),
    }
}

fn finish(best: &Attempt, log: Vec<Attempt>) -> DecompositionResult {
    let (boxes, score) = best.result.clone().expect("best attempt succeeded");
    DecompositionResult {
        boxes,
        k_used: best.k,
        score,
        attempts_made: log.len(),
        attempts: log,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn rect_pixels(x: u32, y: u32, w: u32, h: u32) -> Vec<(u32, u32)> {
        (y..y + h).flat_map(|yy| (x..x + w).map(move |xx| (xx, yy))).collect()
    }

    /// Counts mask pixels and box-union pixels over the whole grid.
    fn brute_force_score(boxes: &[BBox], mask: &Mask) -> (f64, f64) {
        let (mut in_mask, mut in_union, mut both) = (0u64, 0u64, 0u64);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let m = mask.contains(x, y);
                let u = boxes.iter().any(|bx| bx.contains_pixel(x, y));
                in_mask += m as u64;
                in_union += u as u64;
                both += (m && u) as u64;
            }
        }
        (both as f64 / in_mask as f64, (in_union - both) as f64 / in_union as f64)
    }

    fn disjoint(boxes: &[BBox]) -> bool {
        (0..boxes.len()).all(|i| (i + 1..boxes.len()).all(|j| boxes[i].intersection(&boxes[j]).is_none()))
    }

    #[test]
    fn nearest_rank_percentiles() {
        // Sorting oracle: 0..99, P05 and P95 at 0-based ranks 5 and 95.
        let mut xs: Vec<u32> = (0..100).collect();
        xs.sort();
        assert_eq!(xs[nearest_rank_index(0.05, 100)], 5);
        assert_eq!(xs[nearest_rank_index(0.95, 100)], 95);
        let cluster: Vec<(u32, u32)> = (0..100).map(|x| (x, 0)).collect();
        assert_eq!(percentile_box(&cluster, 0.05, 0.95), b(5, 0, 91, 1));
        assert_eq!(percentile_box(&[(7, 7)], 0.05, 0.95), b(7, 7, 1, 1));
    }

    #[test]
    fn percentile_box_drops_outlier() {
        let mut cluster: Vec<(u32, u32)> = (0..99).map(|i| (10 + i % 10, 10 + i / 10)).collect();
        cluster.push((500, 500));
        let bx = percentile_box(&cluster, 0.05, 0.95);
        let mut xs: Vec<u32> = cluster.iter().map(|p| p.0).collect();
        xs.sort();
        assert!(xs[95] < 500);
        assert!(!bx.contains_pixel(500, 500));
        assert!(bx.right() <= 20 && bx.bottom() <= 20);
    }

    #[test]
    fn overlap_example_equal_widths() {
        let e = eliminate_overlaps(&[b(0, 0, 10, 10), b(8, 0, 10, 10)]).unwrap();
        assert_eq!(e.boxes, vec![b(0, 0, 9, 10), b(9, 0, 9, 10)]);
        assert_eq!(e.moves[0].axis, Axis::Horizontal);
    }

    #[test]
    fn overlap_example_unequal_widths() {
        let e = eliminate_overlaps(&[b(0, 0, 30, 10), b(20, 0, 10, 10)]).unwrap();
        // Shares 7.5 and 2.5; the larger box takes the ceiling.
        assert_eq!(e.boxes, vec![b(0, 0, 22, 10), b(22, 0, 8, 10)]);
        assert!(disjoint(&e.boxes));
        assert_eq!((e.moves[0].move_first, e.moves[0].move_second), (8, 2));
    }

    #[test]
    fn disjoint_boxes_untouched() {
        let input = [b(0, 0, 5, 5), b(5, 5, 5, 5)];
        let e = eliminate_overlaps(&input).unwrap();
        assert_eq!(e.boxes, input);
        assert!(e.moves.is_empty());
    }

    #[test]
    fn containment_stays_inside_input() {
        let input = [b(0, 0, 100, 100), b(10, 10, 10, 10)];
        let e = eliminate_overlaps(&input).unwrap();
        assert!(disjoint(&e.boxes));
        for (o, i) in e.boxes.iter().zip(&input) {
            assert!(i.contains_box(o));
        }
        let identical = [b(3, 3, 4, 4), b(3, 3, 4, 4)];
        let e = eliminate_overlaps(&identical).unwrap();
        assert!(disjoint(&e.boxes));
    }

    #[test]
    fn single_pixel_duplicates_are_degenerate() {
        let err = eliminate_overlaps(&[b(1, 1, 1, 1), b(1, 1, 1, 1)]).unwrap_err();
        assert_eq!(err, DecomposeError::Degenerate(0, 1));
    }

    #[test]
    fn score_examples() {
        let p = DecompositionParams::default();
        let mask = Mask::new(20, 20, rect_pixels(2, 2, 10, 6)).unwrap();
        let s = score_config(&[b(2, 2, 10, 6)], &mask, &p);
        assert_eq!((s.coverage, s.overflow, s.score, s.valid), (1.0, 0.0, 1.0, true));
        let s = score_config(&[b(2, 2, 5, 6)], &mask, &p);
        assert_eq!((s.coverage, s.overflow, s.valid), (0.5, 0.0, false));
        let s = score_config(&[], &mask, &p);
        assert_eq!((s.coverage, s.overflow, s.valid), (0.0, 0.0, false));
    }

    #[test]
    fn decompose_single_pixel() {
        let mask = Mask::new(10, 10, [(4, 4)]).unwrap();
        let r = decompose_stuff(&mask, &DecompositionParams::default()).unwrap();
        assert_eq!(r.boxes, vec![b(4, 4, 1, 1)]);
        assert_eq!(r.k_used, 1);
        assert_eq!((r.score.coverage, r.score.overflow), (1.0, 0.0));
    }

    #[test]
    fn decompose_blob_with_outliers() {
        let mut px = rect_pixels(20, 20, 10, 10);
        px.extend([(0, 0), (59, 0), (0, 59)]);
        let mask = Mask::new(60, 60, px).unwrap();
        let r = decompose_stuff(&mask, &DecompositionParams::default()).unwrap();
        assert_eq!(r.k_used, 1);
        assert!(r.score.valid);
        let (cov, ovf) = brute_force_score(&r.boxes, &mask);
        assert_eq!((r.score.coverage, r.score.overflow), (cov, ovf));
        assert!(cov >= 0.9 && ovf <= 0.3);
    }

    #[test]
    fn decompose_two_blobs() {
        let mut px = rect_pixels(0, 0, 20, 20);
        px.extend(rect_pixels(60, 60, 20, 20));
        let mask = Mask::new(80, 80, px).unwrap();
        let p = DecompositionParams::default();
        // A single spanning box overflows.
        let spanning = score_config(&[b(0, 0, 80, 80)], &mask, &p);
        assert!(spanning.overflow > 0.3);
        let r = decompose_stuff(&mask, &p).unwrap();
        assert_eq!(r.k_used, 2);
        assert_eq!(r.boxes.len(), 2);
        assert!(r.score.valid);
        assert!(r
            .attempts
            .iter()
            .filter(|a| a.k == 1)
            .all(|a| !a.score().unwrap().valid));
        let mut bx = r.boxes.clone();
        bx.sort();
        assert!(bx[0].right() <= 20 && bx[1].x >= 60);
    }

    #[test]
    fn solid_square_falls_back_to_best_invalid() {
        // A one-pixel diagonal overflows every box configuration.
        let mask = Mask::new(40, 40, (0..40).map(|i| (i, i))).unwrap();
        let r = decompose_stuff(&mask, &DecompositionParams::default()).unwrap();
        assert!(!r.score.valid);
        assert_eq!(r.attempts_made, 60);
        let max = r
            .attempts
            .iter()
            .filter_map(|a| a.score())
            .map(|s| s.score)
            .fold(f64::MIN, f64::max);
        assert_eq!(r.score.score, max);
    }

    #[test]
    fn decomposition_is_deterministic_and_exec_independent() {
        let mut px = rect_pixels(3, 3, 15, 7);
        px.extend(rect_pixels(30, 25, 6, 12));
        px.extend([(39, 0), (0, 39)]);
        let mask = Mask::new(40, 40, px).unwrap();
        let p = DecompositionParams {
            base_seed: 1234,
            ..Default::default()
        };
        let a = decompose_stuff_with(&mask, &p, Exec::Sequential).unwrap();
        let c = decompose_stuff_with(&mask, &p, Exec::Parallel).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn rejects_bad_params() {
        let mask = Mask::new(4, 4, [(0, 0)]).unwrap();
        for p in [
            DecompositionParams {
                k_min: 0,
                ..Default::default()
            },
            DecompositionParams {
                k_max: 7,
                ..Default::default()
            },
            DecompositionParams {
                percentile_lo: 0.9,
                percentile_hi: 0.1,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                decompose_stuff(&mask, &p),
                Err(DecomposeError::InvalidParams(_))
            ));
        }
        let empty = Mask::new(4, 4, []).unwrap();
        assert_eq!(
            decompose_stuff(&empty, &DecompositionParams::default()),
            Err(DecomposeError::EmptyMask)
        );
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..30, 0u32..30, 1u32..20, 1u32..20).prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn score_matches_pixel_count(
            px in prop::collection::vec((0u32..40, 0u32..40), 1..120),
            raw in prop::collection::vec(arb_box(), 1..4),
        ) {
            let mask = Mask::new(50, 50, px).unwrap();
            let boxes = eliminate_overlaps(&raw).unwrap().boxes;
            let s = score_config(&boxes, &mask, &DecompositionParams::default());
            let (cov, ovf) = brute_force_score(&boxes, &mask);
            prop_assert_eq!(s.coverage, cov);
            prop_assert_eq!(s.overflow, ovf);
        }

        #[test]
        fn pure_mask_boxes_never_hurt(
            px in prop::collection::vec((0u32..30, 0u32..30), 1..200),
            base in arb_box(),
        ) {
            let mask = Mask::new(60, 60, px).unwrap();
            let p = DecompositionParams::default();
            let before = score_config(&[base], &mask, &p);
            // A 1x1 box on a mask pixel outside `base` holds mask pixels only.
            if let Some(&(x, y)) = mask.pixels().iter().find(|&&(x, y)| !base.contains_pixel(x, y)) {
                let after = score_config(&[base, b(x, y, 1, 1)], &mask, &p);
                prop_assert!(after.coverage >= before.coverage);
                prop_assert!(after.overflow <= before.overflow);
            }
        }

        #[test]
        fn eliminated_boxes_are_disjoint_subsets(raw in prop::collection::vec(arb_box(), 1..7)) {
            if let Ok(e) = eliminate_overlaps(&raw) {
                prop_assert!(disjoint(&e.boxes));
                for (o, i) in e.boxes.iter().zip(&raw) {
                    prop_assert!(i.contains_box(o));
                }
            }
        }
    }
}
