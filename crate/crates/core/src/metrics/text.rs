//! Sentence-level language metrics: METEOR, BLEU-4 and ROUGE-L.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::stem::porter_stem;
use crate::markup::strip_tags;

pub const BLEU_EPSILON: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Tokenizes caption prose with grounding markup removed.
pub fn tokenize_caption(text: &str) -> Vec<String> {
    tokenize(&strip_tags(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorDetail {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Aligned `(candidate index, reference index)` pairs: exact matches first,
/// then Porter-stem matches, each stage greedy left to right.
pub fn meteor_alignment<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_used = vec![false; candidate.len()];
    let mut pairs = Vec::new();
    for (i, c) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && reference[j].as_ref() == c.as_ref()) {
            ref_used[j] = true;
            cand_used[i] = true;
            pairs.push((i, j));
        }
    }
    let ref_stems: Vec<String> = reference.iter().map(|r| porter_stem(r.as_ref())).collect();
    for (i, c) in candidate.iter().enumerate() {
        if cand_used[i] {
            continue;
        }
        let stem = porter_stem(c.as_ref());
        if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && ref_stems[j] == stem) {
            ref_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Maximal runs of pairs contiguous in both sentences.
pub fn count_chunks(sorted_pairs: &[(usize, usize)]) -> usize {
    if sorted_pairs.is_empty() {
        return 0;
    }
    1 + sorted_pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

pub fn meteor_detail<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> MeteorDetail {
    let zero = MeteorDetail {
        matches: 0,
        chunks: 0,
        precision: 0.0,
        recall: 0.0,
        fmean: 0.0,
        penalty: 0.0,
        score: 0.0,
    };
    if candidate.is_empty() || reference.is_empty() {
        return zero;
    }
    let pairs = meteor_alignment(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return zero;
    }
    let chunks = count_chunks(&pairs);
    let precision = m as f64 / candidate.len() as f64;
    let recall = m as f64 / reference.len() as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    MeteorDetail {
        matches: m,
        chunks,
        precision,
        recall,
        fmean,
        penalty,
        score: fmean * (1.0 - penalty),
    }
}

pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    meteor_detail(candidate, reference).score
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for order `n`.
pub fn modified_precision_counts<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let clipped = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    let total = candidate.len().saturating_sub(n - 1);
    (clipped, total)
}

/// Sentence BLEU-4. Orders longer than the candidate are skipped; a zero
/// clipped count is replaced by [`BLEU_EPSILON`].
pub fn bleu4<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let c = candidate.len();
    let r = reference.len();
    if c == 0 || r == 0 {
        return 0.0;
    }
    let orders = c.min(4);
    let log_sum: f64 = (1..=orders)
        .map(|n| {
            let (clipped, total) = modified_precision_counts(candidate, reference, n);
            let num = if clipped == 0 { BLEU_EPSILON } else { clipped as f64 };
            (num / total as f64).ln()
        })
        .sum();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / orders as f64).exp()
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let r = l as f64 / reference.len() as f64;
    let p = l as f64 / candidate.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * r * p / (r + b2 * p)
}
