//! LLM-free trigger chain deciding whether a step needs supervision.
//!
//! Conditions are evaluated in a fixed order and the first match wins:
//! sub-agent report marker, critical error, inefficiency, excessive
//! observation length. Everything here is a pure function of its inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{ActionStep, StepId, ToolCall, Trace};

pub const DEFAULT_REPORT_MARKER: &str = "<summary_of_work>";
pub const DEFAULT_LENGTH_THRESHOLD: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    SubAgentReport,
    ErrorOccurrence,
    InefficientBehavior,
    ExcessiveLength,
    NoTrigger,
}

impl TriggerKind {
    pub const INTERVENTIONS: [TriggerKind; 4] = [
        TriggerKind::SubAgentReport,
        TriggerKind::ErrorOccurrence,
        TriggerKind::InefficientBehavior,
        TriggerKind::ExcessiveLength,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::SubAgentReport => "sub_agent_report",
            TriggerKind::ErrorOccurrence => "error_occurrence",
            TriggerKind::InefficientBehavior => "inefficient_behavior",
            TriggerKind::ExcessiveLength => "excessive_length",
            TriggerKind::NoTrigger => "no_trigger",
        }
    }

    pub fn fires(self) -> bool {
        self != TriggerKind::NoTrigger
    }
}

impl std::fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FilterConfigError {
    #[error("length_threshold must be positive")]
    ZeroThreshold,
    #[error("loop_window must be positive")]
    ZeroLoopWindow,
    #[error("loop_min_repeats must be at least 2, got {0}")]
    LoopRepeatsTooSmall(usize),
    #[error("step_budget must be positive")]
    ZeroStepBudget,
    #[error("report_marker must not be empty")]
    EmptyMarker,
    #[error("noncritical_error_patterns must not contain empty patterns")]
    EmptyPattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Observation length in characters above which purification fires.
    pub length_threshold: usize,
    pub report_marker: String,
    pub loop_window: usize,
    pub loop_min_repeats: usize,
    /// Consecutive same-tool steps tolerated before guidance fires.
    pub step_budget: usize,
    pub noncritical_error_patterns: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            length_threshold: DEFAULT_LENGTH_THRESHOLD,
            report_marker: DEFAULT_REPORT_MARKER.to_string(),
            loop_window: 4,
            loop_min_repeats: 2,
            step_budget: 10,
            noncritical_error_patterns: Vec::new(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterConfigError> {
        if self.length_threshold == 0 {
            return Err(FilterConfigError::ZeroThreshold);
        }
        if self.loop_window == 0 {
            return Err(FilterConfigError::ZeroLoopWindow);
        }
        if self.loop_min_repeats < 2 {
            return Err(FilterConfigError::LoopRepeatsTooSmall(self.loop_min_repeats));
        }
        if self.step_budget == 0 {
            return Err(FilterConfigError::ZeroStepBudget);
        }
        if self.report_marker.is_empty() {
            return Err(FilterConfigError::EmptyMarker);
        }
        if self.noncritical_error_patterns.iter().any(String::is_empty) {
            return Err(FilterConfigError::EmptyPattern);
        }
        Ok(())
    }

    /// How many recent local steps [`classify`] needs to see.
    pub fn trace_window(&self) -> usize {
        self.loop_window.max(self.step_budget.saturating_add(1))
    }
}

/// Partial [`FilterConfig`] used for per-session and per-request overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfigPatch {
    pub length_threshold: Option<usize>,
    pub report_marker: Option<String>,
    pub loop_window: Option<usize>,
    pub loop_min_repeats: Option<usize>,
    pub step_budget: Option<usize>,
    pub noncritical_error_patterns: Option<Vec<String>>,
}

impl FilterConfigPatch {
    pub fn apply(&self, base: &FilterConfig) -> FilterConfig {
        let mut out = base.clone();
        if let Some(v) = self.length_threshold {
            out.length_threshold = v;
        }
        if let Some(v) = &self.report_marker {
            out.report_marker = v.clone();
        }
        if let Some(v) = self.loop_window {
            out.loop_window = v;
        }
        if let Some(v) = self.loop_min_repeats {
            out.loop_min_repeats = v;
        }
        if let Some(v) = self.step_budget {
            out.step_budget = v;
        }
        if let Some(v) = &self.noncritical_error_patterns {
            out.noncritical_error_patterns = v.clone();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InefficiencyKind {
    HardLoop,
    StepBudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InefficiencySignal {
    pub kind: InefficiencyKind,
    pub evidence: Vec<StepId>,
    pub repeated_action: Option<ToolCall>,
}

impl InefficiencySignal {
    pub fn describe(&self) -> String {
        let action = self
            .repeated_action
            .as_ref()
            .map(|c| format!("{}({})", c.tool_name, c.arguments))
            .unwrap_or_else(|| "(no tool call)".to_string());
        match self.kind {
            InefficiencyKind::HardLoop => format!(
                "hard loop: {} consecutive steps repeated {action} with identical observations",
                self.evidence.len()
            ),
            InefficiencyKind::StepBudgetExceeded => format!(
                "step budget exceeded: {} consecutive steps used {}",
                self.evidence.len(),
                self.repeated_action.as_ref().map_or("the same tool", |c| c.tool_name.as_str())
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub kind: TriggerKind,
    pub signal: Option<InefficiencySignal>,
}

impl TriggerDecision {
    fn plain(kind: TriggerKind) -> Self {
        Self { kind, signal: None }
    }
}

/// Classifies `step` against its local trace. The trace is expected to end
/// with `step` itself.
pub fn classify(step: &ActionStep, trace: &Trace, config: &FilterConfig) -> TriggerDecision {
    if step.observations.contains(&config.report_marker) {
        return TriggerDecision::plain(TriggerKind::SubAgentReport);
    }
    if let Some(error) = &step.error {
        if !is_noncritical_error(error, &config.noncritical_error_patterns) {
            return TriggerDecision::plain(TriggerKind::ErrorOccurrence);
        }
    }
    if let Some(signal) = check_inefficiency(trace, config) {
        return TriggerDecision { kind: TriggerKind::InefficientBehavior, signal: Some(signal) };
    }
    if step.observation_chars() > config.length_threshold {
        return TriggerDecision::plain(TriggerKind::ExcessiveLength);
    }
    TriggerDecision::plain(TriggerKind::NoTrigger)
}

fn same_action(a: &ActionStep, b: &ActionStep) -> bool {
    a.tool_calls == b.tool_calls && a.observations == b.observations
}

/// Hard loops take precedence over step-budget overruns.
pub fn check_inefficiency(trace: &Trace, config: &FilterConfig) -> Option<InefficiencySignal> {
    let steps: Vec<&ActionStep> = trace.iter().collect();
    let window = &steps[steps.len().saturating_sub(config.loop_window)..];

    // latest maximal run of identical (tool calls, observations) in the window
    let mut best: Option<(usize, usize)> = None;
    let mut start = 0;
    for i in 1..=window.len() {
        if i == window.len() || !same_action(window[i - 1], window[i]) {
            if i - start >= config.loop_min_repeats {
                best = Some((start, i));
            }
            start = i;
        }
    }
    if let Some((from, to)) = best {
        return Some(InefficiencySignal {
            kind: InefficiencyKind::HardLoop,
            evidence: window[from..to].iter().map(|s| s.step_id).collect(),
            repeated_action: window[from].tool_calls.first().cloned(),
        });
    }

    let last = steps.last()?;
    let tool = last.primary_tool()?;
    let run: Vec<&ActionStep> = steps.iter().rev().take_while(|s| s.primary_tool() == Some(tool)).copied().collect();
    if run.len() > config.step_budget {
        return Some(InefficiencySignal {
            kind: InefficiencyKind::StepBudgetExceeded,
            evidence: run.iter().rev().map(|s| s.step_id).collect(),
            repeated_action: last.tool_calls.first().cloned(),
        });
    }
    None
}

/// Case-sensitive substring match against known benign failures.
pub fn is_noncritical_error(error: &str, patterns: &[String]) -> bool {
    patterns.iter().any(|p| error.contains(p.as_str()))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::trace::TraceScope;

    fn trace_of(steps: Vec<ActionStep>) -> Trace {
        Trace { entries: steps.into_iter().map(Arc::new).collect(), scope: TraceScope::Local("a".into()) }
    }

    fn step(id: u64) -> ActionStep {
        ActionStep::new("s", id, "a")
    }

    fn classify_alone(step: ActionStep) -> TriggerKind {
        let trace = trace_of(vec![step.clone()]);
        classify(&step, &trace, &FilterConfig::default()).kind
    }

    #[test]
    fn error_outranks_length() {
        let s = step(1).with_error("boom").with_observations("x".repeat(10_000));
        assert_eq!(classify_alone(s), TriggerKind::ErrorOccurrence);
    }

    #[test]
    fn below_threshold_is_no_trigger() {
        assert_eq!(classify_alone(step(1).with_observations("x".repeat(2_999))), TriggerKind::NoTrigger);
    }

    #[test]
    fn marker_outranks_error() {
        let s = step(1).with_error("boom").with_observations("report <summary_of_work> done");
        assert_eq!(classify_alone(s), TriggerKind::SubAgentReport);
    }

    #[test]
    fn length_boundary_is_strict() {
        assert_eq!(classify_alone(step(1).with_observations("x".repeat(3_000))), TriggerKind::NoTrigger);
        assert_eq!(classify_alone(step(1).with_observations("x".repeat(3_001))), TriggerKind::ExcessiveLength);
    }

    #[test]
    fn length_counts_chars_not_bytes() {
        // 3,000 two-byte chars is 6,000 bytes but still at the threshold
        assert_eq!(classify_alone(step(1).with_observations("é".repeat(3_000))), TriggerKind::NoTrigger);
    }

    #[test]
    fn noncritical_error_falls_through() {
        let cfg = FilterConfig { noncritical_error_patterns: vec!["RateLimit".into()], ..FilterConfig::default() };
        let s = step(1).with_error("RateLimit: retrying").with_observations("x".repeat(3_500));
        let trace = trace_of(vec![s.clone()]);
        assert_eq!(classify(&s, &trace, &cfg).kind, TriggerKind::ExcessiveLength);
    }

    #[test]
    fn repeated_page_down_is_hard_loop() {
        let steps: Vec<_> = (1..=3).map(|i| step(i).with_tool("page_down", "").with_observations("same")).collect();
        let signal = check_inefficiency(&trace_of(steps), &FilterConfig::default()).unwrap();
        assert_eq!(signal.kind, InefficiencyKind::HardLoop);
        assert_eq!(signal.evidence, vec![StepId(1), StepId(2), StepId(3)]);
        assert_eq!(signal.repeated_action, Some(ToolCall::new("page_down", "")));
    }

    #[test]
    fn progress_is_not_a_loop() {
        let steps = vec![
            step(1).with_tool("page_down", "").with_observations("page 1"),
            step(2).with_tool("page_down", "").with_observations("page 2"),
        ];
        assert_eq!(check_inefficiency(&trace_of(steps), &FilterConfig::default()), None);
    }

    #[test]
    fn step_budget_exceeded() {
        let steps: Vec<_> =
            (1..=11).map(|i| step(i).with_tool("page_down", "").with_observations(format!("page {i}"))).collect();
        let signal = check_inefficiency(&trace_of(steps.clone()), &FilterConfig::default()).unwrap();
        assert_eq!(signal.kind, InefficiencyKind::StepBudgetExceeded);
        assert_eq!(signal.evidence.len(), 11);
        // exactly at budget does not fire
        assert_eq!(check_inefficiency(&trace_of(steps[1..].to_vec()), &FilterConfig::default()), None);
    }

    #[test]
    fn loop_outside_window_is_ignored() {
        let mut steps: Vec<_> = (1..=2).map(|i| step(i).with_tool("t", "").with_observations("same")).collect();
        steps.extend((3..=6).map(|i| step(i).with_tool("t", "").with_observations(format!("o{i}"))));
        assert_eq!(check_inefficiency(&trace_of(steps), &FilterConfig::default()), None);
    }

    #[test]
    fn noncritical_matching() {
        assert!(is_noncritical_error("RateLimit: retrying", &["RateLimit".into()]));
        assert!(!is_noncritical_error("ZeroDivisionError", &["RateLimit".into()]));
        assert!(!is_noncritical_error("anything", &[]));
        assert!(!is_noncritical_error("ratelimit", &["RateLimit".into()]));
    }

    #[test]
    fn config_validation() {
        assert_eq!(FilterConfig::default().validate(), Ok(()));
        let bad = FilterConfig { loop_min_repeats: 1, ..FilterConfig::default() };
        assert_eq!(bad.validate(), Err(FilterConfigError::LoopRepeatsTooSmall(1)));
        let bad = FilterConfig { length_threshold: 0, ..FilterConfig::default() };
        assert_eq!(bad.validate(), Err(FilterConfigError::ZeroThreshold));
        let bad = FilterConfig { noncritical_error_patterns: vec![String::new()], ..FilterConfig::default() };
        assert_eq!(bad.validate(), Err(FilterConfigError::EmptyPattern));
    }

    #[test]
    fn patch_overrides_only_given_fields() {
        let patch = FilterConfigPatch { length_threshold: Some(10), ..Default::default() };
        let cfg = patch.apply(&FilterConfig::default());
        assert_eq!(cfg.length_threshold, 10);
        assert_eq!(cfg.step_budget, 10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Brute force: any `n` consecutive identical steps inside the last `w`.
        fn oracle_hard_loop(steps: &[ActionStep], w: usize, n: usize) -> bool {
            let window = &steps[steps.len().saturating_sub(w)..];
            if window.len() < n {
                return false;
            }
            (0..=window.len() - n).any(|i| {
                window[i..i + n]
                    .iter()
                    .all(|s| s.tool_calls == window[i].tool_calls && s.observations == window[i].observations)
            })
        }

        fn arb_steps() -> impl Strategy<Value = Vec<ActionStep>> {
            proptest::collection::vec((0u8..3, 0u8..3, 0u8..3), 0..=20).prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (t, a, o))| {
                        step(i as u64 + 1)
                            .with_tool(format!("tool{t}"), format!("arg{a}"))
                            .with_observations(format!("obs{o}"))
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn hard_loop_matches_brute_force(steps in arb_steps(), w in 1usize..8, n in 2usize..5) {
                let cfg = FilterConfig { loop_window: w, loop_min_repeats: n, ..FilterConfig::default() };
                let got = check_inefficiency(&trace_of(steps.clone()), &cfg)
                    .map(|s| s.kind == InefficiencyKind::HardLoop)
                    .unwrap_or(false);
                prop_assert_eq!(got, oracle_hard_loop(&steps, w, n));
            }

            #[test]
            fn lower_threshold_keeps_excessive(len in 1usize..6_000, t in 1usize..6_000, lower in 1usize..6_000) {
                let s = step(1).with_observations("y".repeat(len));
                let trace = trace_of(vec![s.clone()]);
                let at = |th| classify(&s, &trace, &FilterConfig { length_threshold: th, ..FilterConfig::default() }).kind;
                if at(t) == TriggerKind::ExcessiveLength && lower < t {
                    prop_assert_eq!(at(lower), TriggerKind::ExcessiveLength);
                }
            }
        }
    }
}
