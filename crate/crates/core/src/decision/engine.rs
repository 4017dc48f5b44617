use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::action::{ActionSpace, SupervisionDecision};
use super::backend::{BackendError, BackendHandle};
use super::parse::parse_decision;
use super::prompt::{build_prompt, format_reminder, PromptError, PromptInputs};
use crate::context::ContextWindow;
use crate::filter::{FilterConfig, InefficiencySignal, TriggerKind};
use crate::purify::{detect_kind, purify, purify_html, ContentKind};
use crate::trace::{ActionStep, TokenUsage};

pub const EMPTY_PURIFIED: &str = "(no visible content)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackMode {
    /// Unusable supervision degrades to a safe default decision.
    #[default]
    FailOpen,
    /// Backend failures and unusable replies surface as errors.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionPolicy {
    pub fallback: FallbackMode,
    /// Purify HTML observations locally instead of asking the backend.
    pub deterministic_purification: bool,
    /// Upper bound on one supervision pipeline, backend calls included.
    pub deadline_ms: u64,
    /// Ask the backend for step summaries instead of using the extract.
    pub llm_summaries: bool,
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        Self {
            fallback: FallbackMode::FailOpen,
            deterministic_purification: false,
            deadline_ms: 30_000,
            llm_summaries: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionPolicyPatch {
    pub fallback: Option<FallbackMode>,
    pub deterministic_purification: Option<bool>,
    pub deadline_ms: Option<u64>,
    pub llm_summaries: Option<bool>,
}

impl DecisionPolicyPatch {
    pub fn apply(&self, base: &DecisionPolicy) -> DecisionPolicy {
        DecisionPolicy {
            fallback: self.fallback.unwrap_or(base.fallback),
            deterministic_purification: self.deterministic_purification.unwrap_or(base.deterministic_purification),
            deadline_ms: self.deadline_ms.unwrap_or(base.deadline_ms),
            llm_summaries: self.llm_summaries.unwrap_or(base.llm_summaries),
        }
    }
}

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend reply unusable after retry: {0}")]
    Unusable(String),
}

#[derive(Debug, Clone, Copy)]
pub struct DecisionRequest<'a> {
    pub trigger: TriggerKind,
    pub context: &'a ContextWindow,
    pub step: &'a ActionStep,
    pub signal: Option<&'a InefficiencySignal>,
    pub filter: &'a FilterConfig,
}

impl<'a> DecisionRequest<'a> {
    fn prompt_inputs(&self) -> PromptInputs<'a> {
        PromptInputs {
            trigger: self.trigger,
            context: self.context,
            observation: &self.step.observations,
            signal: self.signal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionOutcome {
    pub decision: SupervisionDecision,
    pub usage: TokenUsage,
    pub backend_calls: u32,
    /// Why the fallback policy was applied, if it was.
    pub fallback: Option<String>,
}

impl DecisionOutcome {
    fn fallback(decision: SupervisionDecision, usage: TokenUsage, calls: u32, reason: String) -> Self {
        Self { decision, usage, backend_calls: calls, fallback: Some(reason) }
    }
}

/// Stateless decision maker over a fixed action space and policy.
#[derive(Debug, Clone, Default)]
pub struct DecisionEngine {
    pub space: ActionSpace,
    pub policy: DecisionPolicy,
}

impl DecisionEngine {
    pub fn new(policy: DecisionPolicy) -> Self {
        Self { space: ActionSpace::default(), policy }
    }

    pub async fn decide(
        &self,
        req: DecisionRequest<'_>,
        backend: &BackendHandle,
    ) -> Result<DecisionOutcome, DecisionError> {
        if req.trigger == TriggerKind::ExcessiveLength
            && self.policy.deterministic_purification
            && detect_kind(&req.step.observations, &req.filter.report_marker) == ContentKind::Html
        {
            let purified = purify_html(&req.step.observations);
            let content = if purified.content.is_empty() { EMPTY_PURIFIED.to_string() } else { purified.content };
            let analysis = format!(
                "deterministic HTML purification: {} -> {} characters",
                purified.original_length, purified.purified_length
            );
            return Ok(DecisionOutcome {
                decision: SupervisionDecision::correct(analysis, content),
                usage: TokenUsage::ZERO,
                backend_calls: 0,
                fallback: None,
            });
        }

        let prompt = match build_prompt(&req.prompt_inputs()) {
            Ok(p) => p,
            Err(e) => return self.give_up(req, TokenUsage::ZERO, 0, e.into()),
        };

        let mut usage = TokenUsage::ZERO;
        let mut calls = 0;
        let mut current = prompt.clone();
        let mut problem = String::new();
        for attempt in 0..2 {
            if attempt == 1 {
                current = format!("{prompt}{}", format_reminder(&problem, &self.space.actions(req.trigger)));
            }
            calls += 1;
            let reply = match backend.complete(&current).await {
                Ok(r) => r,
                Err(e) => return self.give_up(req, usage, calls, e.into()),
            };
            usage += reply.usage;
            match parse_decision(&reply.text) {
                Ok(d) => match self.space.validate(d, req.trigger) {
                    Ok(valid) => {
                        return Ok(DecisionOutcome { decision: valid, usage, backend_calls: calls, fallback: None })
                    }
                    Err(rej) => problem = rej.to_string(),
                },
                Err(fail) => problem = fail.to_string(),
            }
        }
        self.give_up(req, usage, calls, DecisionError::Unusable(problem))
    }

    fn give_up(
        &self,
        req: DecisionRequest<'_>,
        usage: TokenUsage,
        calls: u32,
        err: DecisionError,
    ) -> Result<DecisionOutcome, DecisionError> {
        match self.policy.fallback {
            FallbackMode::Strict => Err(err),
            FallbackMode::FailOpen => {
                tracing::warn!(trigger = %req.trigger, error = %err, "supervision fell back");
                Ok(DecisionOutcome::fallback(
                    fallback_decision(req.trigger, req.step, req.filter),
                    usage,
                    calls,
                    err.to_string(),
                ))
            }
        }
    }
}

/// Safe default used when the backend cannot produce a valid decision.
pub fn fallback_decision(trigger: TriggerKind, step: &ActionStep, filter: &FilterConfig) -> SupervisionDecision {
    match trigger {
        TriggerKind::ErrorOccurrence => SupervisionDecision::guide(
            "fallback: templated error guidance",
            format!(
                "An error occurred: {}. Diagnose and retry with corrected inputs.",
                step.error.as_deref().unwrap_or("unknown error")
            ),
        ),
        TriggerKind::ExcessiveLength => {
            let purified = purify(&step.observations, &filter.report_marker);
            let content = if purified.content.is_empty() { EMPTY_PURIFIED.to_string() } else { purified.content };
            SupervisionDecision::correct("fallback: deterministic purification", content)
        }
        TriggerKind::SubAgentReport => {
            let total = step.observation_chars();
            let limit = filter.length_threshold;
            let content = match step.observations.char_indices().nth(limit) {
                Some((byte, _)) => format!(
                    "{}\n[Report truncated by the supervisor to the first {limit} of {total} characters.]",
                    &step.observations[..byte]
                ),
                None => step.observations.clone(),
            };
            SupervisionDecision::correct("fallback: report truncation", content)
        }
        TriggerKind::InefficientBehavior | TriggerKind::NoTrigger => SupervisionDecision::approve("fallback: approve"),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::decision::backend::{MockBackend, ScriptedBackend};
    use crate::decision::SupervisionAction;

    fn ctx(global: bool) -> ContextWindow {
        ContextWindow {
            agent_name: "a".into(),
            global_task: "g".into(),
            local_task: "l".into(),
            local_trace_text: "(no prior steps)".into(),
            step_summary: "s".into(),
            global_trace_text: global.then(|| "trace".to_string()),
        }
    }

    fn run(
        engine: &DecisionEngine,
        trigger: TriggerKind,
        step: &ActionStep,
        backend: Arc<MockBackend>,
    ) -> Result<DecisionOutcome, DecisionError> {
        let context = ctx(trigger == TriggerKind::InefficientBehavior);
        let filter = FilterConfig::default();
        let req = DecisionRequest { trigger, context: &context, step, signal: None, filter: &filter };
        let handle = BackendHandle::new(backend);
        tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap()
            .block_on(engine.decide(req, &handle))
    }

    #[test]
    fn valid_guidance_passes_through() {
        let mock = Arc::new(MockBackend::fixed(
            r#"{"analysis":"stuck","action":"provide_guidance","parameters":{"guidance":"use web_search"}}"#,
        ));
        let out = run(
            &DecisionEngine::default(),
            TriggerKind::InefficientBehavior,
            &ActionStep::new("s", 1, "a"),
            mock.clone(),
        )
        .unwrap();
        assert_eq!(out.decision, SupervisionDecision::guide("stuck", "use web_search"));
        assert_eq!(out.backend_calls, 1);
        assert_eq!(out.fallback, None);
        assert!(out.usage.total > 0);
    }

    #[test]
    fn garbage_twice_falls_back_to_error_template() {
        let mock = Arc::new(MockBackend::fixed("garbage"));
        let step = ActionStep::new("s", 1, "a").with_error("KeyError: 'x'");
        let out = run(&DecisionEngine::default(), TriggerKind::ErrorOccurrence, &step, mock.clone()).unwrap();
        assert_eq!(out.decision.action, SupervisionAction::ProvideGuidance);
        assert_eq!(
            out.decision.payload(),
            Some("An error occurred: KeyError: 'x'. Diagnose and retry with corrected inputs.")
        );
        assert_eq!(mock.calls(), 2);
        assert!(out.fallback.is_some());
    }

    #[test]
    fn retry_recovers_and_carries_reminder() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let n = Arc::new(AtomicUsize::new(0));
        let seen = n.clone();
        let mock = Arc::new(MockBackend::from_fn(move |prompt| {
            if seen.fetch_add(1, Ordering::SeqCst) == 0 {
                Ok(r#"{"analysis":"","action":"approve","parameters":{}}"#.into())
            } else {
                assert!(prompt.contains("REMINDER"));
                Ok(r#"{"analysis":"x","action":"correct_observation","parameters":{"new_observation":"short"}}"#.into())
            }
        }));
        let step = ActionStep::new("s", 1, "a").with_observations("long text");
        let out = run(&DecisionEngine::default(), TriggerKind::ExcessiveLength, &step, mock).unwrap();
        assert_eq!(out.decision.payload(), Some("short"));
        assert_eq!(out.backend_calls, 2);
    }

    #[test]
    fn deterministic_purification_skips_backend() {
        let engine = DecisionEngine::new(DecisionPolicy { deterministic_purification: true, ..Default::default() });
        let row =
            r#"<td class='datacolBoxR' style='padding: 5px;'><a href="/wiki/some_link" title="Some Link">25</a></td>"#;
        let page = format!("<html><body><table><tr>{row}</tr></table></body></html>");
        let mock = Arc::new(MockBackend::failing());
        let step = ActionStep::new("s", 1, "a").with_observations(page);
        let out = run(&engine, TriggerKind::ExcessiveLength, &step, mock.clone()).unwrap();
        assert_eq!(
            out.decision.payload(),
            Some(
                r#"<html><body><table><tr><td><a href="/wiki/some_link" title="Some Link">25</a></td></tr></table></body></html>"#
            )
        );
        assert_eq!(mock.calls(), 0);
        assert_eq!(out.usage, TokenUsage::ZERO);
    }

    #[test]
    fn strict_surfaces_backend_failure() {
        let engine = DecisionEngine::new(DecisionPolicy { fallback: FallbackMode::Strict, ..Default::default() });
        let err = run(
            &engine,
            TriggerKind::ErrorOccurrence,
            &ActionStep::new("s", 1, "a").with_error("e"),
            Arc::new(MockBackend::failing()),
        );
        assert!(matches!(err, Err(DecisionError::Backend(_))));
    }

    #[test]
    fn fallbacks_per_trigger_are_valid() {
        let space = ActionSpace::default();
        let filter = FilterConfig { length_threshold: 10, ..FilterConfig::default() };
        let step = ActionStep::new("s", 1, "a")
            .with_error("boom")
            .with_observations("<summary_of_work> a long sub agent report");
        for t in TriggerKind::INTERVENTIONS {
            let d = fallback_decision(t, &step, &filter);
            assert!(space.validate(d, t).is_ok(), "{t}");
        }
        let report = fallback_decision(TriggerKind::SubAgentReport, &step, &filter);
        assert!(report.payload().unwrap().starts_with("<summary_o\n[Report truncated"));
    }

    #[test]
    fn at_most_two_calls() {
        let mock = Arc::new(MockBackend::fixed(r#"{"action":"run_verification","parameters":{}}"#));
        let _ = run(
            &DecisionEngine::default(),
            TriggerKind::InefficientBehavior,
            &ActionStep::new("s", 1, "a"),
            mock.clone(),
        );
        assert_eq!(mock.calls(), 2);
    }

    #[tokio::test]
    async fn scripted_backend_drives_engine() {
        let fixture = r#"{"prompt_contains": "Intelligence Analyst", "response": "{\"analysis\": \"synth\", \"action\": \"correct_observation\", \"parameters\": {\"new_observation\": \"12 layers\"}}"}"#;
        let backend = BackendHandle::new(Arc::new(ScriptedBackend::from_jsonl(fixture).unwrap()));
        let context = ctx(false);
        let filter = FilterConfig::default();
        let step = ActionStep::new("s", 1, "a").with_observations("<summary_of_work>");
        let req = DecisionRequest {
            trigger: TriggerKind::SubAgentReport,
            context: &context,
            step: &step,
            signal: None,
            filter: &filter,
        };
        let out = DecisionEngine::default().decide(req, &backend).await.unwrap();
        assert_eq!(out.decision.payload(), Some("12 layers"));
    }
}
