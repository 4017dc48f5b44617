//! Offline re-classification of a recorded session log.
//!
//! Steps are replayed in log order. Each one is classified against the trace
//! as it stood when the step arrived, with earlier supervision already
//! applied, so replaying with the live filter settings reproduces the live
//! triggers exactly. No backend is involved.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::executor::apply;
use crate::filter::{classify, FilterConfig, TriggerKind};
use crate::service::metrics::SessionMetrics;
use crate::service::store::{read_log, rebuild_session, LogContents, LogRecord, LogWarning, RebuildError};
use crate::trace::{Session, SessionId, StepId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Divergence {
    /// The replayed filter fires where the live run recorded no event.
    Unrecorded { step_id: StepId, trigger: TriggerKind },
    /// The live run recorded an event where the replayed filter stays quiet.
    Vanished { step_id: StepId, recorded: TriggerKind },
    /// Both fired, with different triggers.
    Changed { step_id: StepId, recorded: TriggerKind, replayed: TriggerKind },
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Unrecorded { step_id, trigger } => {
                write!(f, "step {step_id}: {trigger} fires but no event was recorded")
            }
            Divergence::Vanished { step_id, recorded } => {
                write!(f, "step {step_id}: recorded {recorded} no longer fires")
            }
            Divergence::Changed { step_id, recorded, replayed } => {
                write!(f, "step {step_id}: recorded {recorded}, replay gives {replayed}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub session_id: SessionId,
    pub steps: usize,
    pub trigger_counts: BTreeMap<TriggerKind, usize>,
    /// Steps where supervision would intervene under the replay settings.
    pub intervention_points: Vec<(StepId, TriggerKind)>,
    pub divergences: Vec<Divergence>,
    #[serde(skip)]
    pub warnings: Vec<LogWarning>,
    /// Metrics of the session as recorded.
    pub metrics: SessionMetrics,
}

impl ReplayReport {
    pub fn triggers(&self) -> usize {
        self.intervention_points.len()
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        writeln!(f, "session: {}", self.session_id)?;
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "triggers: {}", self.triggers())?;
        for (kind, n) in &self.trigger_counts {
            writeln!(f, "  {kind}: {n}")?;
        }
        for (step, kind) in &self.intervention_points {
            writeln!(f, "  step {step}: {kind}")?;
        }
        if self.divergences.is_empty() {
            writeln!(f, "divergences: none")?;
        } else {
            writeln!(f, "divergences: {}", self.divergences.len())?;
            for d in &self.divergences {
                writeln!(f, "  {d}")?;
            }
        }
        write!(
            f,
            "recorded tokens: total {} (agents {}, supervisor {}), observation chars saved {}",
            self.metrics.total_tokens,
            self.metrics.step_tokens,
            self.metrics.supervisor_tokens,
            self.metrics.observation_chars_saved
        )
    }
}

pub fn replay_file(path: &Path, filter: &FilterConfig) -> Result<ReplayReport, ReplayError> {
    let contents = read_log(path).map_err(|e| ReplayError::Io(format!("{}: {e}", path.display())))?;
    replay(&contents, filter)
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Rebuild(#[from] RebuildError),
}

pub fn replay(contents: &LogContents, filter: &FilterConfig) -> Result<ReplayReport, ReplayError> {
    let rebuilt = rebuild_session(contents)?;
    let recorded: HashMap<StepId, TriggerKind> =
        rebuilt.session.events().iter().map(|e| (e.step_id, e.trigger)).collect();

    let mut session: Option<Session> = None;
    let mut trigger_counts = BTreeMap::new();
    let mut points = Vec::new();
    let mut divergences = Vec::new();
    for (_, record) in &contents.records {
        match record {
            LogRecord::Session(h) => {
                let s = session.get_or_insert_with(|| Session::new(h.session_id.clone(), h.global_task.clone()));
                s.agents.extend(h.agents.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
            LogRecord::Step(step) => {
                let Some(s) = session.as_mut() else { continue };
                if s.record_step(step.clone()).is_err() {
                    continue;
                }
                let Ok(trace) = s.local_trace(&step.agent_name, filter.trace_window()) else { continue };
                let replayed = classify(step, &trace, filter).kind;
                if replayed.fires() {
                    *trigger_counts.entry(replayed).or_insert(0) += 1;
                    points.push((step.step_id, replayed));
                }
                match (recorded.get(&step.step_id).copied(), replayed.fires()) {
                    (None, true) => {
                        divergences.push(Divergence::Unrecorded { step_id: step.step_id, trigger: replayed })
                    }
                    (Some(r), false) => divergences.push(Divergence::Vanished { step_id: step.step_id, recorded: r }),
                    (Some(r), true) if r != replayed => {
                        divergences.push(Divergence::Changed { step_id: step.step_id, recorded: r, replayed })
                    }
                    _ => {}
                }
            }
            LogRecord::Supervision(event) => {
                let Some(s) = session.as_mut() else { continue };
                let Some(step) = s.step(event.step_id) else { continue };
                let modified = apply(&event.decision, step, event.verification_findings.as_deref());
                s.replace_observations(event.step_id, modified.observations);
            }
        }
    }

    Ok(ReplayReport {
        session_id: rebuilt.session.session_id.clone(),
        steps: rebuilt.session.step_count(),
        trigger_counts,
        intervention_points: points,
        divergences,
        warnings: rebuilt.warnings,
        metrics: SessionMetrics::from_session(&rebuilt.session, rebuilt.supervise),
    })
}
