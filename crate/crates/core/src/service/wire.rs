//! JSON bodies of the HTTP and stdio protocols.

use serde::{Deserialize, Serialize};

use crate::context::RenderLimitsPatch;
use crate::decision::SupervisionAction;
use crate::executor::{EventId, EventOutcome};
use crate::filter::{FilterConfigPatch, TriggerKind};
use crate::trace::{ActionStep, InteractionKind, SessionId, StepId, TokenUsage, ToolCall};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    #[serde(default)]
    pub local_task: String,
}

impl AgentSpec {
    pub fn new(name: impl Into<String>, local_task: impl Into<String>) -> Self {
        Self { name: name.into(), local_task: local_task.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    pub filter: Option<FilterConfigPatch>,
    pub render: Option<RenderLimitsPatch>,
}

/// Inline session creation carried by a supervise request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionBootstrap {
    pub global_task: String,
    pub agents: Vec<AgentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervise: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    /// Generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<SessionId>,
    pub global_task: String,
    pub agents: Vec<AgentSpec>,
    /// Defaults to the service setting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervise: Option<bool>,
    /// Session-wide filter and rendering settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<ConfigOverrides>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: SessionId,
}

/// An [`ActionStep`] as sent by an integration: ids and usage are optional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_id: Option<StepId>,
    pub agent_name: String,
    #[serde(default)]
    pub kind: InteractionKind,
    #[serde(default)]
    pub model_output: String,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub observations: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Estimated from the step's text when the framework reports none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
}

impl WireStep {
    pub fn into_step(self, session_id: SessionId, fallback_id: StepId) -> ActionStep {
        let usage = self.token_usage.unwrap_or_else(|| {
            let calls: String = self
                .tool_calls
                .iter()
                .map(|c| format!("{}({})", c.tool_name, c.arguments))
                .collect::<Vec<_>>()
                .join("\n");
            TokenUsage::estimated(&self.observations, &format!("{}{calls}", self.model_output))
        });
        ActionStep {
            step_id: self.step_id.unwrap_or(fallback_id),
            session_id,
            agent_name: self.agent_name,
            kind: self.kind,
            model_output: self.model_output,
            tool_calls: self.tool_calls,
            observations: self.observations,
            error: self.error,
            timestamp: 0,
            token_usage: usage,
        }
    }
}

impl From<&ActionStep> for WireStep {
    fn from(step: &ActionStep) -> Self {
        Self {
            step_id: Some(step.step_id),
            agent_name: step.agent_name.clone(),
            kind: step.kind,
            model_output: step.model_output.clone(),
            tool_calls: step.tool_calls.clone(),
            observations: step.observations.clone(),
            error: step.error.clone(),
            token_usage: Some(step.token_usage),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperviseRequest {
    pub session_id: SessionId,
    pub step: WireStep,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<SessionBootstrap>,
    /// Applies to this request only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_overrides: Option<ConfigOverrides>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperviseResponse {
    pub step_id: StepId,
    pub trigger: TriggerKind,
    pub action: SupervisionAction,
    /// Observations the agent should see instead of its own, when changed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modified_observations: Option<String>,
    /// Text appended after the guidance marker, for guidance and verification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<EventId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<EventOutcome>,
    pub supervisor_usage: TokenUsage,
}

impl SuperviseResponse {
    pub fn pass(step_id: StepId) -> Self {
        Self {
            step_id,
            trigger: TriggerKind::NoTrigger,
            action: SupervisionAction::Approve,
            modified_observations: None,
            guidance: None,
            event_id: None,
            outcome: None,
            supervisor_usage: TokenUsage::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
