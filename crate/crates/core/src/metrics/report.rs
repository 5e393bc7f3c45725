//! Per-caption metric reports, corpus aggregation, rating records and the
//! agreement table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::agreement::{krippendorff_alpha, pearson, spearman, Distance};
use super::grounding::{gmeteor, grounding_scores, GroundingScore};
use super::text::{bleu4, meteor, rouge_l, tokenize_caption};
use crate::markup::{parse_caption, referenced_ids};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanguageScores {
    pub meteor: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub grounding: GroundingScore,
    pub language: LanguageScores,
    pub gmeteor: f64,
}

/// Scores one candidate caption against one reference caption and the ids
/// detected in the frame. A candidate that does not parse references nothing.
pub fn score_caption(candidate: &str, reference: &str, detected: &BTreeSet<String>) -> MetricReport {
    let referenced = parse_caption(candidate).map(|a| referenced_ids(&a)).unwrap_or_default();
    let grounding = grounding_scores(&referenced, detected);
    let (c, r) = (tokenize_caption(candidate), tokenize_caption(reference));
    let language = LanguageScores {
        meteor: meteor(&c, &r),
        bleu4: bleu4(&c, &r),
        rouge_l: rouge_l(&c, &r),
    };
    MetricReport {
        grounding,
        language,
        gmeteor: gmeteor(language.meteor, grounding.f1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringItem {
    pub frame_id: String,
    pub candidate: String,
    pub reference: String,
    pub detected: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub frame_id: String,
    pub report: MetricReport,
}

/// Column means over captions, plus the corpus-level alternatives: micro
/// P/R/F1 from summed counts and gMETEOR of the mean METEOR and mean F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub captions: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub meteor: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    /// Mean of per-caption gMETEOR.
    pub gmeteor: f64,
    /// gMETEOR of the corpus means.
    pub gmeteor_of_means: f64,
    pub micro: GroundingScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub items: Vec<ScoredItem>,
    pub summary: Option<CorpusSummary>,
}

pub fn score_corpus(items: &[ScoringItem], exec: Exec) -> CorpusReport {
    let items: Vec<ScoredItem> = exec.map(items, |it| ScoredItem {
        frame_id: it.frame_id.clone(),
        report: score_caption(&it.candidate, &it.reference, &it.detected),
    });
    let summary = summarize(items.iter().map(|i| &i.report));
    CorpusReport { items, summary }
}

pub fn summarize<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Option<CorpusSummary> {
    let reports: Vec<&MetricReport> = reports.into_iter().collect();
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let (tp, fp, fn_) = reports.iter().fold((0, 0, 0), |(a, b, c), r| {
        (a + r.grounding.tp, b + r.grounding.fp, c + r.grounding.fn_)
    });
    let meteor = mean(&|r| r.language.meteor);
    let f1 = mean(&|r| r.grounding.f1);
    Some(CorpusSummary {
        captions: reports.len(),
        precision: mean(&|r| r.grounding.precision),
        recall: mean(&|r| r.grounding.recall),
        f1,
        meteor,
        bleu4: mean(&|r| r.language.bleu4),
        rouge_l: mean(&|r| r.language.rouge_l),
        gmeteor: mean(&|r| r.gmeteor),
        gmeteor_of_means: gmeteor(meteor, f1),
        micro: GroundingScore::from_counts(tp, fp, fn_),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    ObjectPrecision,
    GroundingRecall,
    DescriptionAccuracy,
    LanguageQuality,
    Overall,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::ObjectPrecision,
        Criterion::GroundingRecall,
        Criterion::DescriptionAccuracy,
        Criterion::LanguageQuality,
        Criterion::Overall,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Criterion::ObjectPrecision => "object precision",
            Criterion::GroundingRecall => "grounding recall",
            Criterion::DescriptionAccuracy => "description accuracy",
            Criterion::LanguageQuality => "language quality",
            Criterion::Overall => "overall",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RatingError {
    #[error("expected 5 criteria, got {0}")]
    WrongCount(usize),
    #[error("criterion {index} ({}) is {value}; ratings are 1..=5", Criterion::ALL[*index].label())]
    OutOfRange { index: usize, value: i64 },
}

/// Checks a raw criteria list and converts it to the fixed-size form.
pub fn check_criteria(raw: &[i64]) -> Result<[u8; 5], RatingError> {
    if raw.len() != 5 {
        return Err(RatingError::WrongCount(raw.len()));
    }
    let mut out = [0u8; 5];
    for (i, &v) in raw.iter().enumerate() {
        if !(1..=5).contains(&v) {
            return Err(RatingError::OutOfRange { index: i, value: v });
        }
        out[i] = v as u8;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub task_id: String,
    pub frame_id: String,
    pub caption_id: String,
    pub caption_revision: u64,
    pub rater_id: String,
    pub criteria: [u8; 5],
    pub created_at: chrono::DateTime<chrono::Utc>,
}

impl RatingRecord {
    /// The rated unit: one caption revision of one frame.
    pub fn unit(&self) -> (&str, &str, u64) {
        (&self.frame_id, &self.caption_id, self.caption_revision)
    }

    pub fn check(&self) -> Result<(), RatingError> {
        let raw: Vec<i64> = self.criteria.iter().map(|&c| i64::from(c)).collect();
        check_criteria(&raw).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCell {
    pub criterion: Criterion,
    pub alpha: Option<f64>,
    pub mean: Option<f64>,
    pub ratings: usize,
    /// Why alpha is missing, when it is.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub source: String,
    pub captions: usize,
    pub cells: Vec<AgreementCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub distance: Distance,
    pub rows: Vec<AgreementRow>,
}

impl AgreementReport {
    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.cells.iter().all(|c| c.alpha.is_some()))
    }
}

/// Raters × items matrix for one criterion; items are caption revisions.
pub fn rating_matrix(ratings: &[RatingRecord], criterion: Criterion) -> Vec<Vec<Option<f64>>> {
    let idx = Criterion::ALL.iter().position(|&c| c == criterion).expect("criterion");
    let items: BTreeSet<_> = ratings.iter().map(RatingRecord::unit).collect();
    let items: Vec<_> = items.into_iter().collect();
    let raters: BTreeSet<&str> = ratings.iter().map(|r| r.rater_id.as_str()).collect();
    let mut matrix: BTreeMap<&str, Vec<Option<f64>>> = raters.iter().map(|&r| (r, vec![None; items.len()])).collect();
    for r in ratings {
        let col = items.binary_search(&r.unit()).expect("item");
        matrix.get_mut(r.rater_id.as_str()).expect("rater")[col] = Some(f64::from(r.criteria[idx]));
    }
    matrix.into_values().collect()
}

/// Alpha and mean rating per criterion for each caption source group. Groups
/// without enough pairable ratings get a note instead of an alpha.
pub fn agreement_report(groups: &[(String, Vec<RatingRecord>)], distance: Distance) -> AgreementReport {
    let rows = groups
        .iter()
        .map(|(source, ratings)| {
            let captions = ratings.iter().map(RatingRecord::unit).collect::<BTreeSet<_>>().len();
            let cells = Criterion::ALL
                .iter()
                .enumerate()
                .map(|(i, &criterion)| {
                    let mean = (!ratings.is_empty())
                        .then(|| ratings.iter().map(|r| f64::from(r.criteria[i])).sum::<f64>() / ratings.len() as f64);
                    let (alpha, note) = match krippendorff_alpha(&rating_matrix(ratings, criterion), distance) {
                        Ok(a) => (Some(a), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    AgreementCell {
                        criterion,
                        alpha,
                        mean,
                        ratings: ratings.len(),
                        note,
                    }
                })
                .collect();
            AgreementRow {
                source: source.clone(),
                captions,
                cells,
            }
        })
        .collect();
    AgreementReport { distance, rows }
}

/// Left-aligned first column, right-aligned others, columns padded to fit.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_owned()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

impl fmt::Display for AgreementReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut headers = vec!["source"];
        headers.extend(Criterion::ALL.iter().map(|c| c.label()));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                let mut cells = vec![row.source.clone()];
                cells.extend(row.cells.iter().map(|c| match (c.alpha, c.mean) {
                    (Some(a), Some(m)) => format!("{a:.3} ({m:.2})"),
                    (None, Some(m)) => format!("n/a ({m:.2})"),
                    _ => "n/a".to_owned(),
                }));
                cells
            })
            .collect();
        write!(f, "{}", render_table(&headers, &rows))
    }
}

pub const SCORE_HEADERS: [&str; 8] = ["frame", "P", "R", "F1", "METEOR", "BLEU-4", "ROUGE-L", "gMETEOR"];

pub fn score_row(label: &str, r: &MetricReport) -> Vec<String> {
    vec![
        label.to_owned(),
        format!("{:.4}", r.grounding.precision),
        format!("{:.4}", r.grounding.recall),
        format!("{:.4}", r.grounding.f1),
        format!("{:.4}", r.language.meteor),
        format!("{:.4}", r.language.bleu4),
        format!("{:.4}", r.language.rouge_l),
        format!("{:.4}", r.gmeteor),
    ]
}

impl fmt::Display for CorpusReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rows: Vec<Vec<String>> = self.items.iter().map(|i| score_row(&i.frame_id, &i.report)).collect();
        if let Some(s) = &self.summary {
            rows.push(vec![
                format!("mean ({})", s.captions),
                format!("{:.4}", s.precision),
                format!("{:.4}", s.recall),
                format!("{:.4}", s.f1),
                format!("{:.4}", s.meteor),
                format!("{:.4}", s.bleu4),
                format!("{:.4}", s.rouge_l),
                format!("{:.4}", s.gmeteor),
            ]);
        }
        write!(f, "{}", render_table(&SCORE_HEADERS, &rows))?;
        if let Some(s) = &self.summary {
            writeln!(
                f,
                "micro P/R/F1 {:.4}/{:.4}/{:.4}; gMETEOR of means {:.4}",
                s.micro.precision, s.micro.recall, s.micro.f1, s.gmeteor_of_means
            )?;
        }
        Ok(())
    }
}

/// One rated caption revision with its automatic scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedItem {
    pub unit: String,
    pub source: String,
    pub report: MetricReport,
    /// Mean rating per criterion, in [`Criterion::ALL`] order.
    pub mean_ratings: [f64; 5],
    pub raters: usize,
}

pub const METRIC_NAMES: [&str; 7] = ["P", "R", "F1", "METEOR", "BLEU-4", "ROUGE-L", "gMETEOR"];

pub fn metric_values(r: &MetricReport) -> [f64; 7] {
    [
        r.grounding.precision,
        r.grounding.recall,
        r.grounding.f1,
        r.language.meteor,
        r.language.bleu4,
        r.language.rouge_l,
        r.gmeteor,
    ]
}

pub fn mean_criteria(ratings: &[&RatingRecord]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (i, o) in out.iter_mut().enumerate() {
        *o = ratings.iter().map(|r| f64::from(r.criteria[i])).sum::<f64>() / ratings.len() as f64;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub metric: String,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub note: Option<String>,
}

/// Correlation of each automatic metric with the mean human rating on one
/// criterion, across rated captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub criterion: Criterion,
    pub items: usize,
    pub cells: Vec<CorrelationCell>,
}

pub fn correlation_report(items: &[RatedItem], criterion: Criterion) -> CorrelationReport {
    let ci = Criterion::ALL.iter().position(|&c| c == criterion).expect("criterion");
    let human: Vec<f64> = items.iter().map(|i| i.mean_ratings[ci]).collect();
    let cells = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(mi, name)| {
            let xs: Vec<f64> = items.iter().map(|i| metric_values(&i.report)[mi]).collect();
            let (p, s) = (pearson(&xs, &human), spearman(&xs, &human));
            CorrelationCell {
                metric: (*name).to_owned(),
                note: p.as_ref().err().map(ToString::to_string),
                pearson: p.ok(),
                spearman: s.ok(),
            }
        })
        .collect();
    CorrelationReport {
        criterion,
        items: items.len(),
        cells,
    }
}

impl fmt::Display for CorrelationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.3}"));
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|c| vec![c.metric.clone(), cell(c.pearson), cell(c.spearman)])
            .collect();
        writeln!(
            f,
            "{} vs automatic metrics over {} captions",
            self.criterion.label(),
            self.items
        )?;
        write!(f, "{}", render_table(&["metric", "pearson", "spearman"], &rows))
    }
}
