//! Assembles what the supervisor sees about a flagged step: agent name,
//! global and local task, rendered local trace, a step summary and, for
//! inefficiency reviews only, the rendered global trace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::backend::BackendHandle;
use crate::filter::TriggerKind;
use crate::trace::{ActionStep, Session, TokenUsage, Trace, DEFAULT_LOCAL_WINDOW};

pub const TRUNCATION_MARKER: &str = "…[truncated]";
pub const PLACEHOLDER: &str = "(none)";
pub const EMPTY_TRACE: &str = "(no prior steps)";

const SUMMARY_INSTRUCTION: &str = "Summarize the following agent step for a supervisor in a few sentences. \
Keep tool names, arguments, key facts from the observation and the full error message if any.\n\n";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("agent `{0}` is not registered in this session")]
    UnknownAgent(String),
    #[error("no context is built for steps that did not trigger supervision")]
    NotTriggered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderLimits {
    pub per_field_chars: usize,
    pub thought_chars: usize,
    pub obs_chars: usize,
    /// Steps of local history shown, excluding the current step.
    pub local_window: usize,
}

impl Default for RenderLimits {
    fn default() -> Self {
        Self { per_field_chars: 500, thought_chars: 400, obs_chars: 800, local_window: DEFAULT_LOCAL_WINDOW }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderLimitsPatch {
    pub per_field_chars: Option<usize>,
    pub thought_chars: Option<usize>,
    pub obs_chars: Option<usize>,
    pub local_window: Option<usize>,
}

impl RenderLimitsPatch {
    pub fn apply(&self, base: &RenderLimits) -> RenderLimits {
        RenderLimits {
            per_field_chars: self.per_field_chars.unwrap_or(base.per_field_chars),
            thought_chars: self.thought_chars.unwrap_or(base.thought_chars),
            obs_chars: self.obs_chars.unwrap_or(base.obs_chars),
            local_window: self.local_window.unwrap_or(base.local_window),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub agent_name: String,
    pub global_task: String,
    pub local_task: String,
    pub local_trace_text: String,
    pub step_summary: String,
    pub global_trace_text: Option<String>,
}

fn or_placeholder(s: &str) -> String {
    if s.trim().is_empty() {
        PLACEHOLDER.to_string()
    } else {
        s.to_string()
    }
}

/// Clips to `limit` chars, appending the truncation marker when clipped.
pub fn clip(text: &str, limit: usize) -> String {
    match text.char_indices().nth(limit) {
        Some((byte, _)) => format!("{}{TRUNCATION_MARKER}", &text[..byte]),
        None => text.to_string(),
    }
}

pub fn build_context(
    step: &ActionStep,
    session: &Session,
    trigger: TriggerKind,
    limits: &RenderLimits,
) -> Result<ContextWindow, ContextError> {
    build_context_with_summary(step, session, trigger, limits, summarize_step(step, limits))
}

/// Same as [`build_context`] with a caller-supplied step summary.
pub fn build_context_with_summary(
    step: &ActionStep,
    session: &Session,
    trigger: TriggerKind,
    limits: &RenderLimits,
    summary: String,
) -> Result<ContextWindow, ContextError> {
    if !trigger.fires() {
        return Err(ContextError::NotTriggered);
    }
    let local_task =
        session.local_task(&step.agent_name).ok_or_else(|| ContextError::UnknownAgent(step.agent_name.clone()))?;
    let history = session
        .local_trace(&step.agent_name, limits.local_window.saturating_add(1))
        .map_err(|_| ContextError::UnknownAgent(step.agent_name.clone()))?
        .without(step.step_id);
    let history = Trace {
        entries: history.entries[history.len().saturating_sub(limits.local_window)..].to_vec(),
        scope: history.scope,
    };
    let global_trace_text =
        (trigger == TriggerKind::InefficientBehavior).then(|| format_global_trace(&session.global_trace(), limits));
    Ok(ContextWindow {
        agent_name: or_placeholder(&step.agent_name),
        global_task: or_placeholder(&session.global_task),
        local_task: or_placeholder(local_task),
        local_trace_text: format_local_trace(&history, limits),
        step_summary: or_placeholder(&summary),
        global_trace_text,
    })
}

fn tools_line(step: &ActionStep) -> String {
    if step.tool_calls.is_empty() {
        PLACEHOLDER.to_string()
    } else {
        step.tool_calls.iter().map(|c| c.tool_name.as_str()).collect::<Vec<_>>().join(", ")
    }
}

fn arguments_line(step: &ActionStep) -> String {
    step.tool_calls.iter().map(|c| c.arguments.as_str()).collect::<Vec<_>>().join("; ")
}

fn render_step(out: &mut String, index: usize, step: &ActionStep, limits: &RenderLimits, with_agent: bool) {
    use std::fmt::Write;
    let n = limits.per_field_chars;
    if with_agent {
        let _ = writeln!(out, "Step {} [{}] (id {}):", index, step.agent_name, step.step_id);
    } else {
        let _ = writeln!(out, "Step {} (id {}):", index, step.step_id);
    }
    let _ = writeln!(out, "  tool: {}", clip(&tools_line(step), n));
    let _ = writeln!(out, "  arguments: {}", clip(&arguments_line(step), n));
    let _ = writeln!(out, "  observation: {}", clip(&step.observations, n));
    if let Some(err) = &step.error {
        let _ = writeln!(out, "  error: {}", clip(err, n));
    }
}

pub fn format_local_trace(trace: &Trace, limits: &RenderLimits) -> String {
    render_trace(trace, limits, false)
}

pub fn format_global_trace(trace: &Trace, limits: &RenderLimits) -> String {
    render_trace(trace, limits, true)
}

fn render_trace(trace: &Trace, limits: &RenderLimits, with_agent: bool) -> String {
    if trace.is_empty() {
        return EMPTY_TRACE.to_string();
    }
    let mut out = String::new();
    for (i, step) in trace.iter().enumerate() {
        render_step(&mut out, i + 1, step, limits, with_agent);
    }
    out.truncate(out.trim_end().len());
    out
}

/// Deterministic extract of a step.
pub fn summarize_step(step: &ActionStep, limits: &RenderLimits) -> String {
    let calls = if step.tool_calls.is_empty() {
        PLACEHOLDER.to_string()
    } else {
        step.tool_calls
            .iter()
            .map(|c| format!("{}({})", c.tool_name, clip(&c.arguments, limits.per_field_chars)))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let mut out = format!(
        "Thought: {}\nTool calls: {}\nObservation: {}",
        clip(&step.model_output, limits.thought_chars),
        calls,
        clip(&step.observations, limits.obs_chars),
    );
    if let Some(err) = &step.error {
        out.push_str("\nERROR: ");
        out.push_str(err);
    }
    out
}

/// Summary via the backend, degrading to [`summarize_step`] on failure.
pub async fn summarize_step_with(
    step: &ActionStep,
    backend: Option<&BackendHandle>,
    limits: &RenderLimits,
) -> (String, TokenUsage) {
    let extract = summarize_step(step, limits);
    let Some(backend) = backend else {
        return (extract, TokenUsage::ZERO);
    };
    let mut prompt = String::from(SUMMARY_INSTRUCTION);
    prompt.push_str(&format!(
        "Thought:\n{}\n\nTool calls:\n{}\n\nObservation:\n{}\n",
        step.model_output,
        step.tool_calls.iter().map(|c| format!("{}({})", c.tool_name, c.arguments)).collect::<Vec<_>>().join("\n"),
        step.observations
    ));
    if let Some(err) = &step.error {
        prompt.push_str(&format!("\nError:\n{err}\n"));
    }
    match backend.complete(&prompt).await {
        Ok(done) if !done.text.trim().is_empty() => (done.text.trim().to_string(), done.usage),
        Ok(done) => (extract, done.usage),
        Err(e) => {
            tracing::warn!(error = %e, "step summary backend failed, using extract");
            (extract, TokenUsage::ZERO)
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::decision::backend::MockBackend;
    use crate::trace::TraceScope;

    fn session() -> Session {
        let mut s = Session::new("s", "find the meat").with_agent("a", "search the blog").with_agent("b", "");
        s.record_step(ActionStep::new("s", 1, "a").with_tool("page_down", "").with_observations("p1")).unwrap();
        s.record_step(ActionStep::new("s", 2, "b").with_tool("search", "q").with_observations("r")).unwrap();
        s.record_step(ActionStep::new("s", 3, "a").with_tool("page_down", "").with_observations("p2")).unwrap();
        s
    }

    #[test]
    fn error_context_has_no_global_trace() {
        let s = session();
        let step = s.step(crate::trace::StepId(3)).unwrap().clone();
        let w = build_context(&step, &s, TriggerKind::ErrorOccurrence, &RenderLimits::default()).unwrap();
        assert_eq!(w.global_trace_text, None);
        assert_eq!(w.agent_name, "a");
        assert_eq!(w.global_task, "find the meat");
        assert!(w.local_trace_text.contains("p1"));
        assert!(!w.local_trace_text.contains("p2"), "current step is summarised, not listed");
    }

    #[test]
    fn inefficiency_context_has_global_trace() {
        let s = session();
        let step = s.step(crate::trace::StepId(3)).unwrap().clone();
        let w = build_context(&step, &s, TriggerKind::InefficientBehavior, &RenderLimits::default()).unwrap();
        let g = w.global_trace_text.unwrap();
        assert!(g.contains("[b]") && g.contains("p2"));
    }

    #[test]
    fn extension_rule_for_every_trigger() {
        let s = session();
        let step = s.step(crate::trace::StepId(3)).unwrap().clone();
        for t in TriggerKind::INTERVENTIONS {
            let w = build_context(&step, &s, t, &RenderLimits::default()).unwrap();
            assert_eq!(w.global_trace_text.is_some(), t == TriggerKind::InefficientBehavior, "{t}");
        }
        assert_eq!(
            build_context(&step, &s, TriggerKind::NoTrigger, &RenderLimits::default()),
            Err(ContextError::NotTriggered)
        );
    }

    #[test]
    fn empty_local_task_uses_placeholder() {
        let s = session();
        let step = s.step(crate::trace::StepId(2)).unwrap().clone();
        let w = build_context(&step, &s, TriggerKind::ErrorOccurrence, &RenderLimits::default()).unwrap();
        assert_eq!(w.local_task, PLACEHOLDER);
        assert_eq!(w.local_trace_text, EMPTY_TRACE);
    }

    #[test]
    fn unknown_agent() {
        let s = session();
        let step = ActionStep::new("s", 9, "ghost");
        assert_eq!(
            build_context(&step, &s, TriggerKind::ErrorOccurrence, &RenderLimits::default()),
            Err(ContextError::UnknownAgent("ghost".into()))
        );
    }

    fn one_step_trace(obs: String) -> Trace {
        let step = ActionStep::new("s", 1, "a").with_tool("visit", "url").with_observations(obs);
        Trace { entries: vec![Arc::new(step)], scope: TraceScope::Local("a".into()) }
    }

    #[test]
    fn format_empty_trace() {
        let t = Trace { entries: vec![], scope: TraceScope::Global };
        assert_eq!(format_local_trace(&t, &RenderLimits::default()), "(no prior steps)");
    }

    #[test]
    fn format_short_observation_untouched() {
        let obs = "o".repeat(50);
        let limits = RenderLimits { per_field_chars: 200, ..RenderLimits::default() };
        let text = format_local_trace(&one_step_trace(obs.clone()), &limits);
        assert!(text.contains(&obs));
        assert!(!text.contains(TRUNCATION_MARKER));
    }

    #[test]
    fn format_long_observation_truncated() {
        let limits = RenderLimits { per_field_chars: 500, ..RenderLimits::default() };
        let text = format_local_trace(&one_step_trace("o".repeat(10_000)), &limits);
        let expected = format!("  observation: {}{}", "o".repeat(500), TRUNCATION_MARKER);
        assert!(text.lines().any(|l| l == expected));
    }

    #[test]
    fn summary_of_short_step_is_verbatim() {
        let step = ActionStep::new("s", 1, "a").with_thought("think").with_tool("calc", "1+1").with_observations("2");
        assert_eq!(
            summarize_step(&step, &RenderLimits::default()),
            "Thought: think\nTool calls: calc(1+1)\nObservation: 2"
        );
    }

    #[test]
    fn summary_ends_with_error() {
        let step = ActionStep::new("s", 1, "a").with_error("ZeroDivisionError: division by zero");
        let s = summarize_step(&step, &RenderLimits { obs_chars: 3, ..RenderLimits::default() });
        assert!(s.ends_with("ERROR: ZeroDivisionError: division by zero"));
    }

    #[tokio::test]
    async fn backend_summary_passthrough() {
        let backend = BackendHandle::new(Arc::new(MockBackend::fixed("SUMMARY")));
        let step = ActionStep::new("s", 1, "a").with_observations("x");
        let (summary, usage) = summarize_step_with(&step, Some(&backend), &RenderLimits::default()).await;
        assert_eq!(summary, "SUMMARY");
        assert!(usage.total > 0);
    }

    #[tokio::test]
    async fn backend_failure_degrades_to_extract() {
        let backend = BackendHandle::new(Arc::new(MockBackend::failing()));
        let step = ActionStep::new("s", 1, "a").with_observations("x");
        let (summary, _) = summarize_step_with(&step, Some(&backend), &RenderLimits::default()).await;
        assert_eq!(summary, summarize_step(&step, &RenderLimits::default()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rendering_is_bounded(obs in proptest::collection::vec(0usize..20_000, 0..6), per in 1usize..600) {
                let limits = RenderLimits { per_field_chars: per, ..RenderLimits::default() };
                let entries: Vec<_> = obs.iter().enumerate().map(|(i, n)| {
                    Arc::new(ActionStep::new("s", i as u64, "a").with_tool("t", "a".repeat(*n)).with_observations("x".repeat(*n)))
                }).collect();
                let n = entries.len();
                let t = Trace { entries, scope: TraceScope::Local("a".into()) };
                let text = format_local_trace(&t, &limits);
                // header + three clipped fields per step
                let bound = n * (64 + 3 * (per + TRUNCATION_MARKER.chars().count() + 16)) + EMPTY_TRACE.len();
                prop_assert!(text.chars().count() <= bound);
                prop_assert_eq!(text.clone(), format_local_trace(&t, &limits));
            }
        }
    }
}
