use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Precision, recall and F1 of the object ids a caption references against
/// the ids detected in the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl GroundingScore {
    /// Builds the score from counts. An empty denominator yields 1.0 only
    /// when the other error count is also zero (nothing referenced, nothing
    /// detected); otherwise 0.0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |den_other: usize, other_err: usize| {
            if tp + den_other == 0 {
                if other_err == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                tp as f64 / (tp + den_other) as f64
            }
        };
        let precision = ratio(fp, fn_);
        let recall = ratio(fn_, fp);
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
        }
    }
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn grounding_scores(referenced: &BTreeSet<String>, detected: &BTreeSet<String>) -> GroundingScore {
    let tp = referenced.intersection(detected).count();
    GroundingScore::from_counts(tp, referenced.len() - tp, detected.len() - tp)
}

/// Harmonic mean of METEOR and grounding F1.
pub fn gmeteor(meteor: f64, f1: f64) -> f64 {
    harmonic_mean(meteor, f1)
}
