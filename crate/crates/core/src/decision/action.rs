use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::TriggerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionAction {
    Approve,
    CorrectObservation,
    ProvideGuidance,
    RunVerification,
}

impl SupervisionAction {
    pub const ALL: [SupervisionAction; 4] = [
        SupervisionAction::Approve,
        SupervisionAction::CorrectObservation,
        SupervisionAction::ProvideGuidance,
        SupervisionAction::RunVerification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SupervisionAction::Approve => "approve",
            SupervisionAction::CorrectObservation => "correct_observation",
            SupervisionAction::ProvideGuidance => "provide_guidance",
            SupervisionAction::RunVerification => "run_verification",
        }
    }

    /// Case-insensitive lookup of the wire name.
    pub fn parse(name: &str) -> Option<Self> {
        let name = name.trim();
        Self::ALL.into_iter().find(|a| a.as_str().eq_ignore_ascii_case(name))
    }

    /// Parameter the action requires, if any.
    pub fn required_parameter(self) -> Option<&'static str> {
        match self {
            SupervisionAction::Approve => None,
            SupervisionAction::CorrectObservation => Some("new_observation"),
            SupervisionAction::ProvideGuidance => Some("guidance"),
            SupervisionAction::RunVerification => Some("task"),
        }
    }
}

impl std::fmt::Display for SupervisionAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionParameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_observation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<String>,
    #[serde(rename = "task", alias = "verification_task", default, skip_serializing_if = "Option::is_none")]
    pub verification_task: Option<String>,
}

impl DecisionParameters {
    fn get(&self, action: SupervisionAction) -> Option<&str> {
        match action {
            SupervisionAction::Approve => None,
            SupervisionAction::CorrectObservation => self.new_observation.as_deref(),
            SupervisionAction::ProvideGuidance => self.guidance.as_deref(),
            SupervisionAction::RunVerification => self.verification_task.as_deref(),
        }
    }

    fn is_empty(&self) -> bool {
        self.new_observation.is_none() && self.guidance.is_none() && self.verification_task.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionDecision {
    #[serde(default)]
    pub analysis: String,
    pub action: SupervisionAction,
    #[serde(default)]
    pub parameters: DecisionParameters,
}

impl SupervisionDecision {
    pub fn approve(analysis: impl Into<String>) -> Self {
        Self {
            analysis: analysis.into(),
            action: SupervisionAction::Approve,
            parameters: DecisionParameters::default(),
        }
    }

    pub fn correct(analysis: impl Into<String>, new_observation: impl Into<String>) -> Self {
        Self {
            analysis: analysis.into(),
            action: SupervisionAction::CorrectObservation,
            parameters: DecisionParameters { new_observation: Some(new_observation.into()), ..Default::default() },
        }
    }

    pub fn guide(analysis: impl Into<String>, guidance: impl Into<String>) -> Self {
        Self {
            analysis: analysis.into(),
            action: SupervisionAction::ProvideGuidance,
            parameters: DecisionParameters { guidance: Some(guidance.into()), ..Default::default() },
        }
    }

    pub fn verify(analysis: impl Into<String>, task: impl Into<String>) -> Self {
        Self {
            analysis: analysis.into(),
            action: SupervisionAction::RunVerification,
            parameters: DecisionParameters { verification_task: Some(task.into()), ..Default::default() },
        }
    }

    /// The parameter text the action acts on.
    pub fn payload(&self) -> Option<&str> {
        self.parameters.get(self.action)
    }

    /// Drops parameters the chosen action does not use.
    pub fn normalized(mut self) -> Self {
        let keep = self.action;
        let p = &mut self.parameters;
        if keep != SupervisionAction::CorrectObservation {
            p.new_observation = None;
        }
        if keep != SupervisionAction::ProvideGuidance {
            p.guidance = None;
        }
        if keep != SupervisionAction::RunVerification {
            p.verification_task = None;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Rejection {
    #[error("action `{action}` is not permitted under trigger `{trigger}`")]
    ActionOutOfSpace { action: SupervisionAction, trigger: TriggerKind },
    #[error("action `{action}` requires a non-empty `{parameter}` parameter")]
    MissingParameter { action: SupervisionAction, parameter: String },
    #[error("action `approve` takes no parameters")]
    UnexpectedParameter,
}

/// Permitted actions per intervention context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    allowed: BTreeMap<TriggerKind, BTreeSet<SupervisionAction>>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        use SupervisionAction::*;
        let allowed = BTreeMap::from([
            (TriggerKind::ErrorOccurrence, BTreeSet::from([CorrectObservation, ProvideGuidance, RunVerification])),
            (TriggerKind::InefficientBehavior, BTreeSet::from([Approve, ProvideGuidance])),
            (TriggerKind::ExcessiveLength, BTreeSet::from([CorrectObservation])),
            (TriggerKind::SubAgentReport, BTreeSet::from([CorrectObservation])),
        ]);
        Self { allowed }
    }
}

impl ActionSpace {
    pub fn permits(&self, trigger: TriggerKind, action: SupervisionAction) -> bool {
        self.allowed.get(&trigger).is_some_and(|s| s.contains(&action))
    }

    pub fn actions(&self, trigger: TriggerKind) -> Vec<SupervisionAction> {
        self.allowed.get(&trigger).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }

    pub fn validate(
        &self,
        decision: SupervisionDecision,
        trigger: TriggerKind,
    ) -> Result<SupervisionDecision, Rejection> {
        if !self.permits(trigger, decision.action) {
            return Err(Rejection::ActionOutOfSpace { action: decision.action, trigger });
        }
        match decision.action.required_parameter() {
            None if !decision.parameters.is_empty() => Err(Rejection::UnexpectedParameter),
            Some(param) if decision.payload().is_none_or(|p| p.trim().is_empty()) => {
                Err(Rejection::MissingParameter { action: decision.action, parameter: param.to_string() })
            }
            _ => Ok(decision),
        }
    }
}
