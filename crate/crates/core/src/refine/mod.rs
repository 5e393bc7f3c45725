//! Caption generation pipeline and the F1-gated refinement loop.

pub mod http;
pub mod mock;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markup::{referenced_ids, serialize_caption, validate_text, CaptionAst, Diagnostics, SyntaxError};
use crate::metrics::grounding::{grounding_scores, GroundingScore};
use crate::model::{BBox, Frame};
use crate::par::Exec;

pub use http::{HttpCaptioner, HttpCaptionerConfig};
pub use mock::{FnCaptioner, ScriptedCaptioner};

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    General,
    ObjectCrop,
    Synthesis,
    Refine,
}

/// One line of object metadata, box normalized to the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub object_id: String,
    pub class_name: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl ObjectMeta {
    /// `[person-0: person, 0.100,0.250,0.200,0.500]`
    pub fn prompt_line(&self) -> String {
        let [x, y, w, h] = self.bbox;
        format!("[{}: {}, {x:.3},{y:.3},{w:.3},{h:.3}]", self.object_id, self.class_name)
    }
}

pub fn object_metadata(frame: &Frame) -> Vec<ObjectMeta> {
    frame
        .objects
        .iter()
        .map(|o| ObjectMeta {
            object_id: o.object_id.clone(),
            class_name: o.class_name.clone(),
            bbox: o.bbox.normalized(frame.width, frame.height),
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub missing_ids: BTreeSet<String>,
    pub spurious_ids: BTreeSet<String>,
    pub syntax_errors: Vec<SyntaxError>,
}

impl Feedback {
    pub fn is_empty(&self) -> bool {
        self.missing_ids.is_empty() && self.spurious_ids.is_empty() && self.syntax_errors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCaption {
    pub object_id: String,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionerRequest {
    pub frame_id: String,
    pub frame_ref: String,
    pub objects: Vec<ObjectMeta>,
    pub stage: Stage,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<BBox>,
    /// The object a crop request is about.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub general_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub object_captions: Vec<ObjectCaption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
}

impl CaptionerRequest {
    fn base(frame: &Frame, stage: Stage, temperature: f64) -> Self {
        Self {
            frame_id: frame.frame_id.clone(),
            frame_ref: frame.image_ref.clone(),
            objects: object_metadata(frame),
            stage,
            temperature,
            crop: None,
            object_id: None,
            general_caption: None,
            object_captions: Vec::new(),
            prior_caption: None,
            feedback: None,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(format!("temperature {} outside [0, 1]", self.temperature));
        }
        match self.stage {
            Stage::Refine if self.prior_caption.is_none() || self.feedback.is_none() => {
                Err("refine requests need prior_caption and feedback".into())
            }
            Stage::ObjectCrop if self.crop.is_none() => Err("object_crop requests need a crop box".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaptionerError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("captioner returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed captioner response: {0}")]
    BadResponse(String),
    #[error("captioner script exhausted")]
    Exhausted,
}

/// An external caption generator.
pub trait Captioner: Sync {
    fn caption(&self, request: &CaptionerRequest) -> Result<String, CaptionerError>;
}

impl<C: Captioner + ?Sized> Captioner for &C {
    fn caption(&self, request: &CaptionerRequest) -> Result<String, CaptionerError> {
        (**self).caption(request)
    }
}

impl<C: Captioner + ?Sized + Send> Captioner for Box<C> {
    fn caption(&self, request: &CaptionerRequest) -> Result<String, CaptionerError> {
        (**self).caption(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    pub threshold: f64,
    pub max_attempts: u32,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(RefineError::InvalidParams(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if !(1..=DEFAULT_MAX_ATTEMPTS).contains(&self.max_attempts) {
            return Err(RefineError::InvalidParams(format!(
                "max_attempts {} outside 1..={DEFAULT_MAX_ATTEMPTS}",
                self.max_attempts
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttemptStatus {
    Scored { score: GroundingScore },
    Unparseable,
    Failed { error: CaptionerError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub temperature: f64,
    pub stage: Stage,
    pub f1: f64,
    #[serde(flatten)]
    pub status: AttemptStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    /// None when no response ever parsed.
    pub best_caption: Option<CaptionAst>,
    pub best_f1: f64,
    pub best_attempt: Option<u32>,
    pub attempts: Vec<AttemptRecord>,
    pub converged: bool,
}

impl RefinementResult {
    pub fn best_text(&self) -> Option<String> {
        self.best_caption.as_ref().map(serialize_caption)
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.attempts.iter().map(|a| a.temperature).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("attempt {0} outside 1..")]
    AttemptOutOfRange(u32),
    #[error("invalid refinement parameters: {0}")]
    InvalidParams(String),
    #[error("{stage:?} stage failed{}: {error}", object_id.as_deref().map(|o| format!(" for {o}")).unwrap_or_default())]
    Pipeline {
        stage: Stage,
        object_id: Option<String>,
        error: CaptionerError,
    },
    #[error("all {} captioner attempts failed", .0.len())]
    AllAttemptsFailed(Vec<AttemptRecord>),
}

/// 0.5 at attempt 1, plus 0.1 every two attempts, capped at 1.0.
pub fn temperature_at(attempt: u32) -> Result<f64, RefineError> {
    if attempt == 0 {
        return Err(RefineError::AttemptOutOfRange(attempt));
    }
    // Tenths as integers so the schedule hits 0.6, 0.7, ... exactly.
    let tenths = (5 + (attempt - 1) / 2).min(10);
    Ok(f64::from(tenths) / 10.0)
}

pub fn build_feedback(diag: &Diagnostics, score: &GroundingScore, frame: &Frame, ast: &CaptionAst) -> Feedback {
    debug_assert_eq!(score.tp + score.fn_, frame.objects.len());
    let referenced = referenced_ids(ast);
    let detected = frame.object_ids();
    Feedback {
        missing_ids: detected.difference(&referenced).cloned().collect(),
        spurious_ids: referenced.difference(&detected).cloned().collect(),
        syntax_errors: diag.syntax_errors.clone(),
    }
}

/// Parses and scores a caption against the frame.
pub fn assess(text: &str, frame: &Frame) -> (Option<CaptionAst>, GroundingScore, Feedback) {
    let (ast, diag) = validate_text(text, frame);
    match ast {
        Some(ast) => {
            let score = grounding_scores(&referenced_ids(&ast), &frame.object_ids());
            let fb = build_feedback(&diag, &score, frame, &ast);
            (Some(ast), score, fb)
        }
        None => (
            None,
            GroundingScore {
                tp: 0,
                fp: 0,
                fn_: 0,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            },
            Feedback {
                syntax_errors: diag.syntax_errors,
                ..Feedback::default()
            },
        ),
    }
}

fn run_loop(
    frame: &Frame,
    captioner: &dyn Captioner,
    params: &RefineParams,
    first: CaptionerRequest,
) -> Result<RefinementResult, RefineError> {
    params.validate()?;
    let mut attempts: Vec<AttemptRecord> = Vec::new();
    let mut best: Option<(CaptionAst, f64, u32)> = None;
    let mut request = first;
    for a in 1..=params.max_attempts {
        request.temperature = temperature_at(a)?;
        let stage = request.stage;
        let record = match captioner.caption(&request) {
            Err(error) => AttemptRecord {
                attempt: a,
                temperature: request.temperature,
                stage,
                f1: 0.0,
                status: AttemptStatus::Failed { error },
                response: None,
                feedback: None,
            },
            Ok(text) => {
                let (ast, score, feedback) = assess(&text, frame);
                let status = match &ast {
                    Some(_) => AttemptStatus::Scored { score },
                    None => AttemptStatus::Unparseable,
                };
                if let Some(ast) = ast {
                    if best.as_ref().is_none_or(|(_, f, _)| score.f1 > *f) {
                        best = Some((ast, score.f1, a));
                    }
                }
                // The next request revises this response.
                let mut next = CaptionerRequest::base(frame, Stage::Refine, request.temperature);
                next.prior_caption = Some(text.clone());
                next.feedback = Some(feedback.clone());
                request = next;
                AttemptRecord {
                    attempt: a,
                    temperature: request.temperature,
                    stage,
                    f1: score.f1,
                    status,
                    response: Some(text),
                    feedback: Some(feedback),
                }
            }
        };
        attempts.push(record);
        if best.as_ref().is_some_and(|(_, f, _)| *f >= params.threshold) {
            break;
        }
    }
    if attempts
        .iter()
        .all(|r| matches!(r.status, AttemptStatus::Failed { .. }))
    {
        return Err(RefineError::AllAttemptsFailed(attempts));
    }
    let (best_caption, best_f1, best_attempt) = match best {
        Some((ast, f, a)) => (Some(ast), f, Some(a)),
        None => (None, 0.0, None),
    };
    Ok(RefinementResult {
        best_caption,
        best_f1,
        best_attempt,
        converged: best_f1 >= params.threshold,
        attempts,
    })
}

/// Refines an existing caption: every attempt is a refine request carrying
/// the previous response and its feedback.
pub fn refine(
    frame: &Frame,
    initial_caption: &str,
    captioner: &dyn Captioner,
    params: &RefineParams,
) -> Result<RefinementResult, RefineError> {
    let (_, _, feedback) = assess(initial_caption, frame);
    let mut first = CaptionerRequest::base(frame, Stage::Refine, 0.0);
    first.prior_caption = Some(initial_caption.to_owned());
    first.feedback = Some(feedback);
    run_loop(frame, captioner, params, first)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub general_caption: String,
    pub object_captions: Vec<ObjectCaption>,
    pub refinement: RefinementResult,
}

/// General caption, then one caption per object crop, then synthesis; the
/// synthesized caption is attempt 1 of the refinement loop.
pub fn generate_pipeline(
    frame: &Frame,
    captioner: &dyn Captioner,
    params: &RefineParams,
    exec: Exec,
) -> Result<PipelineOutcome, RefineError> {
    params.validate()?;
    let t0 = temperature_at(1)?;
    let general_caption = captioner
        .caption(&CaptionerRequest::base(frame, Stage::General, t0))
        .map_err(|error| RefineError::Pipeline {
            stage: Stage::General,
            object_id: None,
            error,
        })?;
    let crops = exec.map(&frame.objects, |o| {
        let mut req = CaptionerRequest::base(frame, Stage::ObjectCrop, t0);
        req.crop = Some(o.bbox);
        req.object_id = Some(o.object_id.clone());
        captioner
            .caption(&req)
            .map(|caption| ObjectCaption {
                object_id: o.object_id.clone(),
                caption,
            })
            .map_err(|error| RefineError::Pipeline {
                stage: Stage::ObjectCrop,
                object_id: Some(o.object_id.clone()),
                error,
            })
    });
    let object_captions = crops.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut synth = CaptionerRequest::base(frame, Stage::Synthesis, t0);
    synth.general_caption = Some(general_caption.clone());
    synth.object_captions = object_captions.clone();
    let refinement = run_loop(frame, captioner, params, synth)?;
    Ok(PipelineOutcome {
        general_caption,
        object_captions,
        refinement,
    })
}
