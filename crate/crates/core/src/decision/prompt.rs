//! Per-trigger supervision prompts.

use std::collections::HashMap;

use thiserror::Error;

use crate::context::ContextWindow;
use crate::filter::{InefficiencySignal, TriggerKind};

pub const BASE_TEMPLATE: &str = include_str!("templates/base.txt");
pub const ERROR_TEMPLATE: &str = include_str!("templates/error.txt");
pub const INEFFICIENCY_TEMPLATE: &str = include_str!("templates/inefficiency.txt");
pub const COMPRESSION_TEMPLATE: &str = include_str!("templates/compression.txt");
pub const SYNTHESIS_TEMPLATE: &str = include_str!("templates/synthesis.txt");

pub const VERIFICATION_TEMPLATE: &str =
    "You are a verification assistant supporting a supervisor in a multi-agent system.
Answer the verification question below as factually as you can. State your conclusion first, then the evidence.
If the claim cannot be verified, say so explicitly.

Verification question: {task}
";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("inefficiency prompts require the global trace in the context window")]
    MissingGlobalTrace,
    #[error("no prompt exists for trigger `{0}`")]
    NoPrompt(TriggerKind),
}

/// Everything a prompt may reference.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub trigger: TriggerKind,
    pub context: &'a ContextWindow,
    /// Raw observation of the flagged step.
    pub observation: &'a str,
    pub signal: Option<&'a InefficiencySignal>,
}

/// Single-pass `{name}` substitution; unknown names and filled values are
/// never rescanned.
pub fn fill(template: &str, slots: &HashMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len() + slots.values().map(|v| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(after.len());
        match (slots.get(&after[..name_len]), after[name_len..].starts_with('}')) {
            (Some(value), true) if name_len > 0 => {
                out.push_str(value);
                rest = &after[name_len + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn state_line(inputs: &PromptInputs<'_>) -> String {
    let mut line = format!("Supervision trigger: {}.", inputs.trigger);
    if let Some(signal) = inputs.signal {
        line.push_str(" Detected ");
        line.push_str(&signal.describe());
        line.push('.');
    }
    line
}

fn base(inputs: &PromptInputs<'_>) -> String {
    let ctx = inputs.context;
    let state = state_line(inputs);
    let slots = HashMap::from([
        ("global_task", ctx.global_task.as_str()),
        ("agent_name", ctx.agent_name.as_str()),
        ("local_task", ctx.local_task.as_str()),
        ("local_trace_str", ctx.local_trace_text.as_str()),
        ("summary", ctx.step_summary.as_str()),
        ("current_state_summary", state.as_str()),
    ]);
    fill(BASE_TEMPLATE, &slots)
}

pub fn build_prompt(inputs: &PromptInputs<'_>) -> Result<String, PromptError> {
    let ctx = inputs.context;
    match inputs.trigger {
        TriggerKind::ErrorOccurrence => Ok(format!("{}\n{}", base(inputs), ERROR_TEMPLATE)),
        TriggerKind::InefficientBehavior => {
            let global = ctx.global_trace_text.as_deref().ok_or(PromptError::MissingGlobalTrace)?;
            let slots = HashMap::from([("agent_name", ctx.agent_name.as_str()), ("global_trace_str", global)]);
            Ok(format!("{}\n{}", base(inputs), fill(INEFFICIENCY_TEMPLATE, &slots)))
        }
        TriggerKind::ExcessiveLength => {
            Ok(fill(COMPRESSION_TEMPLATE, &HashMap::from([("observation", inputs.observation)])))
        }
        TriggerKind::SubAgentReport => {
            let slots = HashMap::from([
                ("local_task", ctx.local_task.as_str()),
                ("global_task", ctx.global_task.as_str()),
                ("summary", inputs.observation),
            ]);
            Ok(format!("{}\n{}", base(inputs), fill(SYNTHESIS_TEMPLATE, &slots)))
        }
        TriggerKind::NoTrigger => Err(PromptError::NoPrompt(TriggerKind::NoTrigger)),
    }
}

pub fn verification_prompt(task: &str) -> String {
    fill(VERIFICATION_TEMPLATE, &HashMap::from([("task", task)]))
}

/// Appended to the prompt when the first reply was unusable.
pub fn format_reminder(problem: &str, allowed: &[crate::decision::SupervisionAction]) -> String {
    let names: Vec<_> = allowed.iter().map(|a| format!("'{a}'")).collect();
    format!(
        "\n\nREMINDER: your previous reply could not be used ({problem}). Respond with ONLY a JSON object \
with the keys \"analysis\", \"action\" and \"parameters\". The action MUST be one of [{}] and its parameter must be non-empty.",
        names.join(", ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(global: Option<&str>) -> ContextWindow {
        ContextWindow {
            agent_name: "search_agent".into(),
            global_task: "What meat is mentioned?".into(),
            local_task: "Find the story".into(),
            local_trace_text: "(no prior steps)".into(),
            step_summary: "Thought: t".into(),
            global_trace_text: global.map(str::to_string),
        }
    }

    fn inputs<'a>(trigger: TriggerKind, ctx: &'a ContextWindow, obs: &'a str) -> PromptInputs<'a> {
        PromptInputs { trigger, context: ctx, observation: obs, signal: None }
    }

    #[test]
    fn error_prompt_has_debugging_framework() {
        let ctx = window(None);
        let p = build_prompt(&inputs(TriggerKind::ErrorOccurrence, &ctx, "o")).unwrap();
        assert!(p.lines().any(|l| l == "**Step 1: Analyze the Error**"));
        assert!(p.contains("Your Debugging Framework (MANDATORY)"));
        assert!(p.contains("\"What meat is mentioned?\""));
        assert!(p.contains("'search_agent'"));
    }

    #[test]
    fn inefficiency_prompt_has_cost_comparison() {
        let ctx = window(Some("Step 1 [a] (id 1):"));
        let p = build_prompt(&inputs(TriggerKind::InefficientBehavior, &ctx, "o")).unwrap();
        assert!(p.contains("Cost A") && p.contains("Cost B"));
        assert!(p.contains("Cost-Benefit Analysis of Intervention"));
        assert!(p.contains("Step 1 [a] (id 1):"));
    }

    #[test]
    fn inefficiency_prompt_needs_global_trace() {
        let ctx = window(None);
        assert_eq!(
            build_prompt(&inputs(TriggerKind::InefficientBehavior, &ctx, "o")),
            Err(PromptError::MissingGlobalTrace)
        );
    }

    #[test]
    fn compression_prompt_ends_with_observation() {
        let ctx = window(None);
        let p = build_prompt(&inputs(TriggerKind::ExcessiveLength, &ctx, "X")).unwrap();
        assert!(p.trim_end().ends_with("X"));
        assert!(p.contains("Observation Compressor"));
        assert!(!p.contains("{observation}"));
    }

    #[test]
    fn synthesis_prompt_inlines_report() {
        let ctx = window(None);
        let p = build_prompt(&inputs(TriggerKind::SubAgentReport, &ctx, "REPORT BODY")).unwrap();
        assert!(p.contains("Preserve Semantic Structure"));
        assert!(p.contains("REPORT BODY"));
        assert!(p.contains("- \"Find the story\""));
    }

    #[test]
    fn fill_is_single_pass() {
        let slots = HashMap::from([("a", "{b}"), ("b", "B")]);
        assert_eq!(fill("{a} {b} {c} {", &slots), "{b} B {c} {");
        assert_eq!(fill("{\n  \"x\": 1\n}", &slots), "{\n  \"x\": 1\n}");
    }

    #[test]
    fn json_skeleton_survives_filling() {
        let ctx = window(None);
        let p = build_prompt(&inputs(TriggerKind::ErrorOccurrence, &ctx, "o")).unwrap();
        assert!(p.contains("\"parameters\": {"));
        assert!(!p.contains("{summary}") && !p.contains("{current_state_summary}"));
    }
}
