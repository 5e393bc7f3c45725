//! Correlation coefficients and Krippendorff's alpha.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("correlation undefined for a constant sequence")]
    Constant,
    #[error("not enough pairable values: need 2 units with 2 or more ratings each")]
    InsufficientPairable,
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<(), StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFew(xs.len()));
    }
    Ok(())
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Nominal,
    #[default]
    Ordinal,
    Interval,
}

/// Distinct values and the coincidence matrix of pairable ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct Coincidences {
    pub values: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
}

impl Coincidences {
    /// `units` holds the ratings of each unit (item); units with fewer than
    /// two ratings are not pairable and are skipped.
    pub fn from_units(units: &[Vec<f64>]) -> Self {
        let mut values: Vec<f64> = units.iter().filter(|u| u.len() >= 2).flatten().copied().collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let pos = |v: f64| values.iter().position(|&x| x == v).expect("value indexed");
        let mut matrix = vec![vec![0.0; values.len()]; values.len()];
        for unit in units.iter().filter(|u| u.len() >= 2) {
            let w = 1.0 / (unit.len() - 1) as f64;
            for (i, &a) in unit.iter().enumerate() {
                for (j, &b) in unit.iter().enumerate() {
                    if i != j {
                        matrix[pos(a)][pos(b)] += w;
                    }
                }
            }
        }
        Self { values, matrix }
    }

    pub fn marginals(&self) -> Vec<f64> {
        self.matrix.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Squared distance between the `c`-th and `k`-th distinct values.
/// Ordinal distance depends on the value marginals `n`.
pub fn delta2(distance: Distance, values: &[f64], n: &[f64], c: usize, k: usize) -> f64 {
    match distance {
        Distance::Nominal => {
            if c == k {
                0.0
            } else {
                1.0
            }
        }
        Distance::Interval => (values[c] - values[k]).powi(2),
        Distance::Ordinal => {
            let (lo, hi) = if c <= k { (c, k) } else { (k, c) };
            let between: f64 = n[lo..=hi].iter().sum();
            (between - (n[c] + n[k]) / 2.0).powi(2)
        }
    }
}

/// Krippendorff's alpha over a raters × items matrix (`None` = missing).
pub fn krippendorff_alpha(ratings: &[Vec<Option<f64>>], distance: Distance) -> Result<f64, StatsError> {
    let items = ratings.iter().map(Vec::len).max().unwrap_or(0);
    let units: Vec<Vec<f64>> = (0..items)
        .map(|i| ratings.iter().filter_map(|row| row.get(i).copied().flatten()).collect())
        .collect();
    krippendorff_alpha_units(&units, distance)
}

pub fn krippendorff_alpha_units(units: &[Vec<f64>], distance: Distance) -> Result<f64, StatsError> {
    if units.iter().filter(|u| u.len() >= 2).count() < 2 {
        return Err(StatsError::InsufficientPairable);
    }
    let co = Coincidences::from_units(units);
    let nc = co.marginals();
    let n: f64 = nc.iter().sum();
    let v = co.values.len();
    let (mut observed, mut expected) = (0.0, 0.0);
    for c in 0..v {
        for k in 0..v {
            let d = delta2(distance, &co.values, &nc, c, k);
            observed += co.matrix[c][k] * d;
            expected += nc[c] * nc[k] * d;
        }
    }
    if expected == 0.0 {
        // Every pairable value identical: no disagreement is possible.
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}
