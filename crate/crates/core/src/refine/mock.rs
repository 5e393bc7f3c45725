//! Deterministic captioners for tests and dry runs.

use std::collections::HashMap;
use std::sync::Mutex;

use super::{Captioner, CaptionerError, CaptionerRequest, Stage};

type Reply = Result<String, CaptionerError>;

/// Replays a fixed script for synthesis and refine requests. General and
/// object-crop requests get per-stage canned replies. Every request is logged.
#[derive(Debug, Default)]
pub struct ScriptedCaptioner {
    script: Mutex<std::collections::VecDeque<Reply>>,
    repeat: Option<Reply>,
    stage_replies: HashMap<Stage, String>,
    log: Mutex<Vec<CaptionerRequest>>,
}

impl ScriptedCaptioner {
    pub fn new(script: impl IntoIterator<Item = Reply>) -> Self {
        Self {
            script: Mutex::new(script.into_iter().collect()),
            ..Self::default()
        }
    }

    /// Answers every scripted request with the same reply.
    pub fn repeating(reply: Reply) -> Self {
        Self {
            repeat: Some(reply),
            ..Self::default()
        }
    }

    pub fn with_stage_reply(mut self, stage: Stage, reply: &str) -> Self {
        self.stage_replies.insert(stage, reply.to_owned());
        self
    }

    pub fn requests(&self) -> Vec<CaptionerRequest> {
        self.log.lock().expect("log lock").clone()
    }
}

impl Captioner for ScriptedCaptioner {
    fn caption(&self, request: &CaptionerRequest) -> Reply {
        self.log.lock().expect("log lock").push(request.clone());
        if let Some(r) = self.stage_replies.get(&request.stage) {
            return Ok(r.clone());
        }
        if let Some(next) = self.script.lock().expect("script lock").pop_front() {
            return next;
        }
        self.repeat.clone().unwrap_or(Err(CaptionerError::Exhausted))
    }
}

/// Wraps a closure as a captioner.
pub struct FnCaptioner<F>(pub F);

impl<F> Captioner for FnCaptioner<F>
where
    F: Fn(&CaptionerRequest) -> Reply + Sync,
{
    fn caption(&self, request: &CaptionerRequest) -> Reply {
        (self.0)(request)
    }
}
