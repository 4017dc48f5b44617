//! Applies supervision decisions to steps and runs verification.
//!
//! Corrections replace the observation outright, behind a fixed note line.
//! Guidance and verification findings are appended after a fixed marker,
//! leaving the original observation as an untouched prefix. Downstream
//! agents key off both marker strings, so they are constants.

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::prompt::verification_prompt;
use crate::decision::{BackendError, BackendHandle, SupervisionAction, SupervisionDecision};
use crate::filter::TriggerKind;
use crate::trace::{ActionStep, StepId, TokenUsage};

pub const CORRECTION_NOTE: &str = "[Supervisor's Note: observation was corrected/purified by the supervisor.]\n";
pub const GUIDANCE_MARKER: &str = "\n\n[Supervisor Guidance]: ";
pub const VERIFICATION_UNAVAILABLE: &str = "[Verification unavailable]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOutcome {
    Applied,
    FallbackApplied,
    /// Trigger fired but supervision is disabled for the session.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionEvent {
    pub event_id: EventId,
    pub step_id: StepId,
    pub trigger: TriggerKind,
    pub decision: SupervisionDecision,
    /// Observation length in characters before supervision.
    pub pre_length: usize,
    /// Observation length afterwards; the correction note is not counted.
    pub post_length: usize,
    pub supervisor_usage: TokenUsage,
    pub outcome: EventOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_findings: Option<String>,
}

impl SupervisionEvent {
    pub fn chars_saved(&self) -> usize {
        self.pre_length.saturating_sub(self.post_length)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecutorError {
    #[error("verification task must not be empty")]
    EmptyTask,
}

/// Observations after applying `decision`. `findings` is only read for
/// verification decisions; absent findings count as unavailable.
pub fn apply(decision: &SupervisionDecision, step: &ActionStep, findings: Option<&str>) -> ActionStep {
    let mut out = step.clone();
    match decision.action {
        SupervisionAction::Approve => {}
        SupervisionAction::CorrectObservation => {
            out.observations = format!("{CORRECTION_NOTE}{}", decision.payload().unwrap_or_default());
        }
        SupervisionAction::ProvideGuidance => {
            out.observations = append_guidance(&step.observations, decision.payload().unwrap_or_default());
        }
        SupervisionAction::RunVerification => {
            out.observations = append_guidance(&step.observations, findings.unwrap_or(VERIFICATION_UNAVAILABLE));
        }
    }
    out
}

fn append_guidance(observations: &str, text: &str) -> String {
    format!("{observations}{GUIDANCE_MARKER}{text}")
}

/// `post_length` for an event.
pub fn post_length(decision: &SupervisionDecision, modified: &ActionStep) -> usize {
    match decision.action {
        SupervisionAction::CorrectObservation => decision.payload().unwrap_or_default().chars().count(),
        _ => modified.observation_chars(),
    }
}

#[async_trait]
pub trait VerifierBackend: Send + Sync {
    async fn verify(&self, task: &str) -> Result<crate::decision::backend::Completion, BackendError>;
}

/// Verification through the decision backend with a fact-checking prompt.
pub struct BackendVerifier {
    backend: BackendHandle,
}

impl BackendVerifier {
    pub fn new(backend: BackendHandle) -> Self {
        Self { backend }
    }
}

#[async_trait]
impl VerifierBackend for BackendVerifier {
    async fn verify(&self, task: &str) -> Result<crate::decision::backend::Completion, BackendError> {
        self.backend.complete(&verification_prompt(task)).await
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub findings: String,
    pub usage: TokenUsage,
    pub failed: bool,
}

pub async fn run_verification(task: &str, verifier: &dyn VerifierBackend) -> Result<Verification, ExecutorError> {
    if task.trim().is_empty() {
        return Err(ExecutorError::EmptyTask);
    }
    Ok(match verifier.verify(task).await {
        Ok(done) if !done.text.trim().is_empty() => {
            Verification { findings: done.text.trim().to_string(), usage: done.usage, failed: false }
        }
        Ok(done) => Verification { findings: VERIFICATION_UNAVAILABLE.to_string(), usage: done.usage, failed: true },
        Err(e) => {
            tracing::warn!(error = %e, "verification failed");
            Verification { findings: VERIFICATION_UNAVAILABLE.to_string(), usage: TokenUsage::ZERO, failed: true }
        }
    })
}
