//! Drives a scenario through the in-process service twice: once with
//! supervision disabled (the baseline) and once supervised.
//!
//! Agent token usage is modelled, not measured: each step's prompt is the
//! agent's accumulated context (tasks plus every earlier thought, call and
//! observation as the agent saw it) and its completion is the step's own
//! thought and call, both counted with the character heuristic. Supervised
//! runs therefore pay less whenever an intervention shortens what later
//! steps have to re-read, or removes steps altogether.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scenario::Scenario;
use crate::config::SupervisorConfig;
use crate::decision::backend::ScriptedBackend;
use crate::decision::{DecisionBackend, SupervisionAction};
use crate::filter::TriggerKind;
use crate::service::metrics::SessionMetrics;
use crate::service::wire::{ConfigOverrides, CreateSessionRequest, SuperviseRequest, WireStep};
use crate::service::{ServiceError, Supervisor};
use crate::trace::{estimate_tokens, SessionId, TokenUsage};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario `{scenario}` expected triggers {expected:?} but observed {observed:?}")]
    TriggerMismatch { scenario: String, expected: Vec<TriggerKind>, observed: Vec<TriggerKind> },
    #[error("backend fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Which backend answers supervision prompts during simulation.
#[derive(Clone, Default)]
pub enum SimBackend {
    /// The scenario's own scripted fixture.
    #[default]
    Scenario,
    /// A caller-provided backend, e.g. a live model or a mock.
    Custom(Arc<dyn DecisionBackend>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub session_id: SessionId,
    pub supervised: bool,
    pub steps: usize,
    pub triggers: Vec<TriggerKind>,
    pub actions: Vec<SupervisionAction>,
    pub step_tokens: u64,
    pub supervisor_tokens: u64,
    pub total_tokens: u64,
    pub observation_chars_saved: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: String,
    pub expected_triggers: Vec<TriggerKind>,
    pub baseline: RunSummary,
    pub supervised: RunSummary,
}

impl SimulationReport {
    /// Relative change of supervised over baseline total tokens, in percent.
    pub fn token_delta_pct(&self) -> f64 {
        percent_delta(self.baseline.total_tokens as f64, self.supervised.total_tokens as f64)
    }

    pub fn step_delta_pct(&self) -> f64 {
        percent_delta(self.baseline.steps as f64, self.supervised.steps as f64)
    }
}

pub fn percent_delta(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        0.0
    } else {
        (after - before) / before * 100.0
    }
}

fn join_triggers(t: &[TriggerKind]) -> String {
    t.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for SimulationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario: {}", self.scenario)?;
        writeln!(f, "expected triggers:  [{}]", join_triggers(&self.expected_triggers))?;
        writeln!(f, "supervised triggers: [{}]", join_triggers(&self.supervised.triggers))?;
        writeln!(f, "baseline triggers:   [{}]", join_triggers(&self.baseline.triggers))?;
        writeln!(
            f,
            "{:<12} {:>6} {:>12} {:>12} {:>12} {:>12}",
            "run", "steps", "step_tok", "superv_tok", "total_tok", "chars_saved"
        )?;
        for run in [&self.baseline, &self.supervised] {
            writeln!(
                f,
                "{:<12} {:>6} {:>12} {:>12} {:>12} {:>12}",
                if run.supervised { "supervised" } else { "baseline" },
                run.steps,
                run.step_tokens,
                run.supervisor_tokens,
                run.total_tokens,
                run.observation_chars_saved
            )?;
        }
        writeln!(f, "token delta: {:+.2}%", self.token_delta_pct())?;
        write!(f, "step delta:  {:+.2}%", self.step_delta_pct())
    }
}

/// Service configuration for simulating `scenario`: its policy patch on top
/// of `base`, with logs written to `data_dir` when given.
pub fn scenario_config(scenario: &Scenario, base: &SupervisorConfig, data_dir: Option<PathBuf>) -> SupervisorConfig {
    let mut cfg = base.clone();
    cfg.policy = scenario.policy.apply(&base.policy);
    cfg.service.data_dir = data_dir;
    cfg
}

pub fn scenario_backend(scenario: &Scenario) -> Result<Arc<dyn DecisionBackend>, SimulationError> {
    let text = match &scenario.backend_fixture {
        Some(src) => src.load().map_err(|e| SimulationError::Fixture(e.to_string()))?,
        None => String::new(),
    };
    let backend = ScriptedBackend::from_jsonl(&text).map_err(|e| SimulationError::Fixture(e.to_string()))?;
    Ok(Arc::new(backend))
}

/// Baseline and supervised runs of `scenario` on a fresh in-process service.
pub async fn simulate(
    scenario: &Scenario,
    base: &SupervisorConfig,
    backend: SimBackend,
    data_dir: Option<PathBuf>,
) -> Result<SimulationReport, SimulationError> {
    scenario.validate().map_err(SimulationError::InvalidScenario)?;
    let backend = match backend {
        SimBackend::Scenario => scenario_backend(scenario)?,
        SimBackend::Custom(b) => b,
    };
    let supervisor = Supervisor::new(scenario_config(scenario, base, data_dir), backend);
    let report = simulate_on(scenario, &supervisor).await?;
    let observed = &report.supervised.triggers;
    if observed.len() < report.expected_triggers.len()
        || observed[..report.expected_triggers.len()] != report.expected_triggers[..]
    {
        return Err(SimulationError::TriggerMismatch {
            scenario: scenario.name.clone(),
            expected: report.expected_triggers,
            observed: observed.clone(),
        });
    }
    Ok(report)
}

/// Both runs on an existing supervisor, without checking expectations.
pub async fn simulate_on(scenario: &Scenario, supervisor: &Supervisor) -> Result<SimulationReport, SimulationError> {
    let baseline = run_scenario(scenario, supervisor, false).await?;
    let supervised = run_scenario(scenario, supervisor, true).await?;
    Ok(SimulationReport {
        scenario: scenario.name.clone(),
        expected_triggers: scenario.expected_triggers.clone(),
        baseline,
        supervised,
    })
}

pub fn session_name(scenario: &str, supervised: bool) -> String {
    format!("{scenario}-{}", if supervised { "supervised" } else { "baseline" })
}

/// One pass over the script. Returns once the session is closed and its log
/// flushed.
pub async fn run_scenario(
    scenario: &Scenario,
    supervisor: &Supervisor,
    supervised: bool,
) -> Result<RunSummary, SimulationError> {
    let session_id = SessionId::new(session_name(&scenario.name, supervised));
    supervisor
        .create_session(CreateSessionRequest {
            session_id: Some(session_id.clone()),
            global_task: scenario.global_task.clone(),
            agents: scenario.agents.clone(),
            supervise: Some(supervised),
            overrides: Some(ConfigOverrides { filter: Some(scenario.filter.clone()), render: None }),
        })
        .await?;

    let mut contexts: BTreeMap<&str, String> = scenario
        .agents
        .iter()
        .map(|a| (a.name.as_str(), format!("Task: {}\nYour task: {}\n", scenario.global_task, a.local_task)))
        .collect();
    let mut guided: HashSet<&str> = HashSet::new();
    let mut triggers = Vec::new();
    let mut actions = Vec::new();

    for template in &scenario.script {
        let agent = template.agent.as_str();
        if supervised && template.skip_when_guided && guided.contains(agent) {
            continue;
        }
        let call = template.tool.as_ref().map(|c| format!("{}({})", c.tool_name, c.arguments)).unwrap_or_default();
        let completion = format!("{}\n{call}", template.thought);
        let context = contexts.entry(agent).or_default();
        let usage = TokenUsage::new(estimate_tokens(context), estimate_tokens(&completion));

        let response = supervisor
            .handle_supervise(SuperviseRequest {
                session_id: session_id.clone(),
                step: WireStep {
                    step_id: None,
                    agent_name: template.agent.clone(),
                    kind: template.kind,
                    model_output: template.thought.clone(),
                    tool_calls: template.tool.iter().cloned().collect(),
                    observations: template.observations.clone(),
                    error: template.error.clone(),
                    token_usage: Some(usage),
                },
                bootstrap: None,
                config_overrides: None,
            })
            .await?;

        let seen = response.modified_observations.as_deref().unwrap_or(&template.observations);
        context.push_str(&completion);
        context.push_str("\nObservation: ");
        context.push_str(seen);
        if let Some(err) = &template.error {
            context.push_str("\nError: ");
            context.push_str(err);
        }
        context.push('\n');
        if matches!(response.action, SupervisionAction::ProvideGuidance | SupervisionAction::RunVerification) {
            guided.insert(agent);
        }
        triggers.push(response.trigger);
        actions.push(response.action);
    }

    let metrics: SessionMetrics = supervisor.close_session(&session_id).await?;
    Ok(RunSummary {
        session_id,
        supervised,
        steps: metrics.steps,
        triggers,
        actions,
        step_tokens: metrics.step_tokens,
        supervisor_tokens: metrics.supervisor_tokens,
        total_tokens: metrics.total_tokens,
        observation_chars_saved: metrics.observation_chars_saved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::backend::MockBackend;

    fn run(scenario: &Scenario, backend: SimBackend) -> Result<SimulationReport, SimulationError> {
        tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap().block_on(simulate(
            scenario,
            &SupervisorConfig::default(),
            backend,
            None,
        ))
    }

    #[test]
    fn hard_loop_guidance_cuts_steps() {
        let r = run(&Scenario::builtin("hard-loop").unwrap(), SimBackend::Scenario).unwrap();
        assert_eq!(r.baseline.steps, 9);
        assert_eq!(r.supervised.steps, 4);
        assert_eq!(r.supervised.actions[1], SupervisionAction::ProvideGuidance);
    }

    #[test]
    fn mismatch_is_reported() {
        let mut s = Scenario::builtin("error-cascade").unwrap();
        s.expected_triggers[1] = TriggerKind::ExcessiveLength;
        assert!(matches!(run(&s, SimBackend::Scenario), Err(SimulationError::TriggerMismatch { .. })));
    }

    #[test]
    fn approving_backend_keeps_every_step() {
        let s = Scenario::builtin("hard-loop").unwrap();
        let sup = Supervisor::new(
            scenario_config(&s, &SupervisorConfig::default(), None),
            Arc::new(MockBackend::approving()),
        );
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let r = rt.block_on(simulate_on(&s, &sup)).unwrap();
        assert_eq!(r.supervised.steps, r.baseline.steps);
        // Nobody intervened, so the loop keeps firing.
        assert!(r.supervised.triggers.len() > s.expected_triggers.len());
    }

    #[test]
    fn output_is_deterministic() {
        let s = Scenario::builtin("sub-agent-report").unwrap();
        let a = run(&s, SimBackend::Scenario).unwrap().to_string();
        let b = run(&s, SimBackend::Scenario).unwrap().to_string();
        assert_eq!(a, b);
    }

    #[test]
    fn percent_delta_arithmetic() {
        assert_eq!(percent_delta(200.0, 150.0), -25.0);
        assert_eq!(percent_delta(0.0, 5.0), 0.0);
    }
}
