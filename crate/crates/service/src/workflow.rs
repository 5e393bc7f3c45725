//! Refinement and rating workflow. All state lives in the store: task
//! assignment is a create-new claim file, submissions are caption revisions
//! and rating log lines, so a restarted service sees exactly what was saved.

use std::collections::{BTreeMap, BTreeSet};

use groundcap_core::markup::{referenced_ids, validate_text, Diagnostics};
use groundcap_core::metrics::agreement::Distance;
use groundcap_core::metrics::grounding::{grounding_scores, GroundingScore};
use groundcap_core::metrics::report::{
    agreement_report, check_criteria, score_corpus, AgreementReport, CorpusSummary, RatingRecord, ScoredItem,
};
use groundcap_core::model::{Frame, Split};
use groundcap_core::refine::{build_feedback, Feedback};
use groundcap_core::store::corpus::{ratings_by_source, scoring_items};
use groundcap_core::store::{now, CaptionRecord, CaptionSource, FrameRecord, Store, StoreError};
use groundcap_core::Exec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ServiceConfig;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("validation failed: {message}")]
    Validation {
        message: String,
        diagnostics: Option<Diagnostics>,
    },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<StoreError> for WorkflowError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(m) => WorkflowError::NotFound(m),
            e @ StoreError::Conflict { .. } => WorkflowError::Conflict(e.to_string()),
            StoreError::Duplicate(m) => WorkflowError::Conflict(m),
            StoreError::Invalid(m) => WorkflowError::Validation {
                message: m,
                diagnostics: None,
            },
            e => WorkflowError::Internal(e.to_string()),
        }
    }
}

pub type Result<T, E = WorkflowError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Refine,
    Rate,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "refine" => Ok(TaskKind::Refine),
            "rate" => Ok(TaskKind::Rate),
            other => Err(format!("unknown task kind `{other}` (expected refine or rate)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub frame_id: String,
    pub caption_id: String,
    /// Revision to refine from, or the revision being rated.
    pub caption_revision: u64,
    pub kind: TaskKind,
    pub assigned_to: String,
}

/// Live validation result shown next to a caption being edited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub diagnostics: Diagnostics,
    pub grounding: Option<GroundingScore>,
    pub feedback: Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementAccepted {
    pub revision: u64,
    #[serde(flatten)]
    pub validation: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameView {
    pub revision: u64,
    #[serde(flatten)]
    pub record: FrameRecord,
    pub captions: Vec<CaptionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMetrics {
    pub source: String,
    pub summary: Option<CorpusSummary>,
    pub items: Vec<ScoredItem>,
    pub without_reference: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Option<Split>,
    pub sources: Vec<SourceMetrics>,
}

/// Everything the workflow derives from the store about one caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionStatus {
    pub frame_id: String,
    pub caption_id: String,
    pub revision: u64,
    pub source: CaptionSource,
    pub authors: BTreeSet<String>,
    pub refine_assignee: Option<String>,
    /// Slot holders of the latest revision.
    pub rate_assignees: BTreeSet<String>,
    /// All ratings for this caption as `(rater, revision)`.
    pub ratings: BTreeSet<(String, u64)>,
}

pub struct Workflow {
    store: Store,
    /// token → rater id
    tokens: BTreeMap<String, String>,
    raters: BTreeSet<String>,
    study_seed: u64,
    ratings_per_caption: usize,
}

fn refine_claim(fid: &str, cid: &str) -> String {
    format!("refine.{fid}.{cid}")
}

fn rate_prefix(fid: &str, cid: &str) -> String {
    format!("rate.{fid}.{cid}.")
}

fn rate_claim(fid: &str, cid: &str, rev: u64, slot: usize) -> String {
    format!("rate.{fid}.{cid}.r{rev}.s{slot}")
}

/// Ids are restricted to `[A-Za-z0-9_-]`, so `.` safely separates fields.
fn is_task_id(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"_-.".contains(&b))
}

impl Workflow {
    pub fn new(config: &ServiceConfig) -> Result<Self> {
        config.check().map_err(WorkflowError::BadRequest)?;
        let store = Store::open(&config.store)?;
        Ok(Self {
            store,
            tokens: config.raters.iter().map(|r| (r.token.clone(), r.id.clone())).collect(),
            raters: config.raters.iter().map(|r| r.id.clone()).collect(),
            study_seed: config.study_seed,
            ratings_per_caption: config.ratings_per_caption,
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn rater_for_token(&self, token: &str) -> Result<&str> {
        self.tokens
            .get(token)
            .map(String::as_str)
            .ok_or(WorkflowError::Unauthorized)
    }

    fn check_rater(&self, rater: &str) -> Result<()> {
        if self.raters.contains(rater) {
            Ok(())
        } else {
            Err(WorkflowError::Unauthorized)
        }
    }

    /// Every caption as `(frame_id, caption_id)`, sorted.
    fn units(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for fid in self.store.frame_ids()? {
            for cid in self.store.caption_ids(&fid)? {
                out.push((fid.clone(), cid));
            }
        }
        Ok(out)
    }

    pub fn queue_seed(&self, rater: &str) -> u64 {
        let digest = Sha256::digest(format!("{}:{rater}", self.study_seed));
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// The rater's presentation order: all captions shuffled with a seed
    /// derived from the study seed and the rater id.
    pub fn queue(&self, rater: &str) -> Result<Vec<(String, String)>> {
        let mut units = self.units()?;
        units.shuffle(&mut ChaCha8Rng::seed_from_u64(self.queue_seed(rater)));
        Ok(units)
    }

    fn authors(&self, fid: &str, cid: &str) -> Result<BTreeSet<String>> {
        Ok(self
            .store
            .caption_history(fid, cid)?
            .into_iter()
            .filter_map(|c| c.author)
            .collect())
    }

    fn refine_assignee(&self, fid: &str, cid: &str) -> Result<Option<String>> {
        Ok(self
            .store
            .read_claim::<Task>(&refine_claim(fid, cid))?
            .map(|t| t.assigned_to))
    }

    /// Raters who wrote, or hold the refinement task for, any revision.
    fn is_refiner(&self, rater: &str, fid: &str, cid: &str) -> Result<bool> {
        Ok(self.authors(fid, cid)?.contains(rater) || self.refine_assignee(fid, cid)?.as_deref() == Some(rater))
    }

    fn rate_tasks(&self, fid: &str, cid: &str) -> Result<Vec<Task>> {
        let mut out = Vec::new();
        for name in self.store.claims(&rate_prefix(fid, cid))? {
            if let Some(t) = self.store.read_claim::<Task>(&name)? {
                out.push(t);
            }
        }
        Ok(out)
    }

    fn is_rater_of(&self, rater: &str, fid: &str, cid: &str) -> Result<bool> {
        Ok(self.rate_tasks(fid, cid)?.iter().any(|t| t.assigned_to == rater))
    }

    fn rated(&self, task: &Task) -> Result<bool> {
        Ok(self
            .store
            .ratings(&task.frame_id)?
            .iter()
            .any(|r| r.task_id == task.task_id))
    }

    fn refined(&self, task: &Task) -> Result<bool> {
        Ok(self
            .store
            .caption_history(&task.frame_id, &task.caption_id)?
            .iter()
            .any(|c| c.revision > task.caption_revision && c.author.as_deref() == Some(&task.assigned_to)))
    }

    pub fn next_task(&self, rater: &str, kind: TaskKind) -> Result<Option<Task>> {
        self.check_rater(rater)?;
        for (fid, cid) in self.queue(rater)? {
            let found = match kind {
                TaskKind::Refine => self.try_refine_task(rater, &fid, &cid)?,
                TaskKind::Rate => self.try_rate_task(rater, &fid, &cid)?,
            };
            if found.is_some() {
                return Ok(found);
            }
        }
        Ok(None)
    }

    fn try_refine_task(&self, rater: &str, fid: &str, cid: &str) -> Result<Option<Task>> {
        let name = refine_claim(fid, cid);
        if let Some(t) = self.store.read_claim::<Task>(&name)? {
            return Ok((t.assigned_to == rater && !self.refined(&t)?).then_some(t));
        }
        let latest = self.store.load_caption(fid, cid)?;
        if latest.source == CaptionSource::Human || self.is_rater_of(rater, fid, cid)? {
            return Ok(None);
        }
        let task = Task {
            task_id: name.clone(),
            frame_id: fid.to_owned(),
            caption_id: cid.to_owned(),
            caption_revision: latest.revision,
            kind: TaskKind::Refine,
            assigned_to: rater.to_owned(),
        };
        if self.store.claim(&name, &task)? {
            return Ok(Some(task));
        }
        // Lost a race; the winner may be a concurrent request of ours.
        let winner = self.store.read_claim::<Task>(&name)?;
        Ok(winner.filter(|t| t.assigned_to == rater))
    }

    fn try_rate_task(&self, rater: &str, fid: &str, cid: &str) -> Result<Option<Task>> {
        if self.is_refiner(rater, fid, cid)? {
            return Ok(None);
        }
        let latest = self.store.load_caption(fid, cid)?;
        let mine: Vec<Task> = self
            .rate_tasks(fid, cid)?
            .into_iter()
            .filter(|t| t.assigned_to == rater)
            .collect();
        if let Some(t) = mine.iter().find(|t| t.caption_revision == latest.revision) {
            return Ok((!self.rated(t)?).then(|| t.clone()));
        }
        for slot in 0..self.ratings_per_caption {
            let name = rate_claim(fid, cid, latest.revision, slot);
            let task = Task {
                task_id: name.clone(),
                frame_id: fid.to_owned(),
                caption_id: cid.to_owned(),
                caption_revision: latest.revision,
                kind: TaskKind::Rate,
                assigned_to: rater.to_owned(),
            };
            if self.store.claim(&name, &task)? {
                return Ok(Some(task));
            }
        }
        Ok(None)
    }

    fn load_task(&self, rater: &str, task_id: &str, kind: TaskKind) -> Result<Task> {
        self.check_rater(rater)?;
        if !is_task_id(task_id) {
            return Err(WorkflowError::BadRequest(format!("malformed task id `{task_id}`")));
        }
        let task: Task = self
            .store
            .read_claim(task_id)?
            .ok_or_else(|| WorkflowError::NotFound(format!("task {task_id}")))?;
        if task.kind != kind {
            return Err(WorkflowError::BadRequest(format!(
                "task {task_id} is not a {kind:?} task"
            )));
        }
        if task.assigned_to != rater {
            return Err(WorkflowError::Forbidden(format!(
                "task {task_id} is assigned to someone else"
            )));
        }
        Ok(task)
    }

    fn frame(&self, frame_id: &str) -> Result<Frame> {
        Ok(self.store.load_frame(frame_id)?.value.frame)
    }

    pub fn validate(&self, frame_id: &str, text: &str) -> Result<ValidationReport> {
        let frame = self.frame(frame_id)?;
        Ok(validation_report(text, &frame))
    }

    pub fn submit_refinement(
        &self,
        rater: &str,
        task_id: &str,
        text: &str,
        base_revision: u64,
    ) -> Result<RefinementAccepted> {
        let task = self.load_task(rater, task_id, TaskKind::Refine)?;
        if self.is_rater_of(rater, &task.frame_id, &task.caption_id)? {
            return Err(WorkflowError::Forbidden("raters of a caption may not refine it".into()));
        }
        let frame = self.frame(&task.frame_id)?;
        let validation = validation_report(text, &frame);
        if !validation.diagnostics.syntax_errors.is_empty() {
            return Err(WorkflowError::Validation {
                message: format!("caption does not parse: {}", validation.diagnostics.syntax_errors[0]),
                diagnostics: Some(validation.diagnostics),
            });
        }
        let record = CaptionRecord {
            caption_id: task.caption_id.clone(),
            frame_id: task.frame_id.clone(),
            source: CaptionSource::Human,
            text: text.to_owned(),
            revision: base_revision + 1,
            created_at: now(),
            author: Some(rater.to_owned()),
        };
        let revision = self.store.save_caption(&record)?;
        Ok(RefinementAccepted { revision, validation })
    }

    pub fn submit_rating(&self, rater: &str, task_id: &str, criteria: &[i64]) -> Result<RatingRecord> {
        let task = self.load_task(rater, task_id, TaskKind::Rate)?;
        let criteria = check_criteria(criteria).map_err(|e| WorkflowError::Validation {
            message: e.to_string(),
            diagnostics: None,
        })?;
        // Re-checked here: the rater may have become a refiner since claiming.
        if self.is_refiner(rater, &task.frame_id, &task.caption_id)? {
            return Err(WorkflowError::Forbidden(
                "raters may not rate captions they refined".into(),
            ));
        }
        let record = RatingRecord {
            task_id: task.task_id.clone(),
            frame_id: task.frame_id.clone(),
            caption_id: task.caption_id.clone(),
            caption_revision: task.caption_revision,
            rater_id: rater.to_owned(),
            criteria,
            created_at: now(),
        };
        self.store.append_rating(&record)?;
        Ok(record)
    }

    pub fn frame_view(&self, frame_id: &str) -> Result<FrameView> {
        let v = self.store.load_frame(frame_id)?;
        let captions = self
            .store
            .caption_ids(frame_id)?
            .iter()
            .map(|cid| self.store.load_caption(frame_id, cid))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FrameView {
            revision: v.revision,
            record: v.value,
            captions,
        })
    }

    pub fn agreement(&self, sources: &[CaptionSource], distance: Distance) -> Result<AgreementReport> {
        let groups = ratings_by_source(&self.store, sources)?;
        Ok(agreement_report(&groups, distance))
    }

    pub fn metrics(&self, split: Option<Split>, sources: &[CaptionSource]) -> Result<MetricsReport> {
        let mut out = Vec::new();
        for &source in sources {
            let sel = scoring_items(&self.store, source, split)?;
            let report = score_corpus(&sel.items, Exec::default());
            out.push(SourceMetrics {
                source: source.name().to_owned(),
                summary: report.summary,
                items: report.items,
                without_reference: sel.without_reference,
            });
        }
        Ok(MetricsReport { split, sources: out })
    }

    /// Study state as derived from the store.
    pub fn status(&self) -> Result<Vec<CaptionStatus>> {
        let mut out = Vec::new();
        for (fid, cid) in self.units()? {
            let latest = self.store.load_caption(&fid, &cid)?;
            let ratings = self
                .store
                .ratings(&fid)?
                .into_iter()
                .filter(|r| r.caption_id == cid)
                .map(|r| (r.rater_id, r.caption_revision))
                .collect();
            let rate_assignees = self
                .rate_tasks(&fid, &cid)?
                .into_iter()
                .filter(|t| t.caption_revision == latest.revision)
                .map(|t| t.assigned_to)
                .collect();
            out.push(CaptionStatus {
                authors: self.authors(&fid, &cid)?,
                refine_assignee: self.refine_assignee(&fid, &cid)?,
                frame_id: fid,
                caption_id: cid,
                revision: latest.revision,
                source: latest.source,
                rate_assignees,
                ratings,
            });
        }
        Ok(out)
    }
}

pub fn validation_report(text: &str, frame: &Frame) -> ValidationReport {
    let (ast, diagnostics) = validate_text(text, frame);
    match ast {
        Some(ast) => {
            let grounding = grounding_scores(&referenced_ids(&ast), &frame.object_ids());
            let feedback = build_feedback(&diagnostics, &grounding, frame, &ast);
            ValidationReport {
                diagnostics,
                grounding: Some(grounding),
                feedback,
            }
        }
        None => ValidationReport {
            feedback: Feedback {
                syntax_errors: diagnostics.syntax_errors.clone(),
                ..Feedback::default()
            },
            diagnostics,
            grounding: None,
        },
    }
}
