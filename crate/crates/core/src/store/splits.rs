use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub seed: u64,
    pub eval_fraction: f64,
    pub eval_count: usize,
    pub assignments: BTreeMap<String, Split>,
}

impl SplitTable {
    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }
}

/// Seeded partition: ids are sorted and de-duplicated, shuffled, and the
/// first `round(n * eval_fraction)` become eval.
pub fn assign_splits<S: AsRef<str>>(frame_ids: &[S], eval_fraction: f64, seed: u64) -> Result<SplitTable, String> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(format!("eval fraction {eval_fraction} must lie in (0, 1)"));
    }
    let mut ids: Vec<&str> = frame_ids.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    ids.dedup();
    let eval_count = (ids.len() as f64 * eval_fraction).round() as usize;
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), if i < eval_count { Split::Eval } else { Split::Train }))
        .collect();
    Ok(SplitTable {
        seed,
        eval_fraction,
        eval_count,
        assignments,
    })
}
