//! Interaction data model: steps, sessions, traces and token accounting.
//!
//! Every agent interaction is captured as an [`ActionStep`]. Steps are
//! recorded into a [`Session`], which assigns monotonic sequence timestamps
//! and keeps running token totals. [`Trace`] values are immutable snapshots
//! over the recorded steps, scoped either to one agent or to the whole
//! session.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::SupervisionEvent;

/// Default number of recent steps in a local trace.
pub const DEFAULT_LOCAL_WINDOW: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("agent `{0}` is not registered in this session")]
    UnknownAgent(String),
    #[error("step id {0} already recorded in this session")]
    DuplicateStepId(StepId),
    #[error("step belongs to session `{found}`, expected `{expected}`")]
    SessionMismatch { expected: SessionId, found: SessionId },
}

/// Step identifier, unique within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepId(pub u64);

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Ids double as log file stems, so only a conservative alphabet is allowed.
    pub fn is_valid(&self) -> bool {
        !self.0.is_empty()
            && self.0.len() <= 128
            && !self.0.starts_with('.')
            && self.0.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Which system component the agent interacted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    AgentAgent,
    #[default]
    AgentTool,
    AgentMemory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawTokenUsage")]
pub struct TokenUsage {
    #[serde(rename = "prompt")]
    pub prompt_tokens: u64,
    #[serde(rename = "completion")]
    pub completion_tokens: u64,
    pub total: u64,
}

#[derive(Deserialize)]
struct RawTokenUsage {
    prompt: u64,
    completion: u64,
    total: Option<u64>,
}

impl TryFrom<RawTokenUsage> for TokenUsage {
    type Error = String;

    fn try_from(raw: RawTokenUsage) -> Result<Self, Self::Error> {
        let usage = TokenUsage::new(raw.prompt, raw.completion);
        match raw.total {
            Some(total) if total != usage.total => {
                Err(format!("token_usage.total {total} != prompt {} + completion {}", raw.prompt, raw.completion))
            }
            _ => Ok(usage),
        }
    }
}

impl TokenUsage {
    pub const ZERO: TokenUsage = TokenUsage { prompt_tokens: 0, completion_tokens: 0, total: 0 };

    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self { prompt_tokens, completion_tokens, total: prompt_tokens + completion_tokens }
    }

    /// Usage estimated from raw prompt and completion text.
    pub fn estimated(prompt: &str, completion: &str) -> Self {
        Self::new(estimate_tokens(prompt), estimate_tokens(completion))
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(self.prompt_tokens + rhs.prompt_tokens, self.completion_tokens + rhs.completion_tokens)
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::ZERO, |acc, u| acc + u)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    #[serde(default)]
    pub arguments: String,
}

impl ToolCall {
    pub fn new(tool_name: impl Into<String>, arguments: impl Into<String>) -> Self {
        Self { tool_name: tool_name.into(), arguments: arguments.into() }
    }
}

/// One agent interaction: the unit of supervision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionStep {
    pub step_id: StepId,
    pub session_id: SessionId,
    pub agent_name: String,
    pub kind: InteractionKind,
    pub model_output: String,
    pub tool_calls: Vec<ToolCall>,
    pub observations: String,
    pub error: Option<String>,
    /// Sequence number assigned by [`Session::record_step`].
    #[serde(default)]
    pub timestamp: u64,
    pub token_usage: TokenUsage,
}

impl ActionStep {
    pub fn new(session_id: impl Into<SessionId>, step_id: u64, agent_name: impl Into<String>) -> Self {
        Self {
            step_id: StepId(step_id),
            session_id: session_id.into(),
            agent_name: agent_name.into(),
            kind: InteractionKind::AgentTool,
            model_output: String::new(),
            tool_calls: Vec::new(),
            observations: String::new(),
            error: None,
            timestamp: 0,
            token_usage: TokenUsage::ZERO,
        }
    }

    pub fn with_thought(mut self, thought: impl Into<String>) -> Self {
        self.model_output = thought.into();
        self
    }

    pub fn with_tool(mut self, name: impl Into<String>, arguments: impl Into<String>) -> Self {
        self.tool_calls.push(ToolCall::new(name, arguments));
        self
    }

    pub fn with_observations(mut self, observations: impl Into<String>) -> Self {
        self.observations = observations.into();
        self
    }

    pub fn with_error(mut self, error: impl Into<String>) -> Self {
        self.error = Some(error.into());
        self
    }

    pub fn with_kind(mut self, kind: InteractionKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_usage(mut self, usage: TokenUsage) -> Self {
        self.token_usage = usage;
        self
    }

    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }

    /// Name of the first tool call, used for same-tool run counting.
    pub fn primary_tool(&self) -> Option<&str> {
        self.tool_calls.first().map(|c| c.tool_name.as_str())
    }

    pub fn observation_chars(&self) -> usize {
        self.observations.chars().count()
    }
}

impl From<String> for SessionId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceScope {
    Local(String),
    Global,
}

/// Immutable, ordered view over recorded steps.
#[derive(Debug, Clone)]
pub struct Trace {
    pub entries: Vec<Arc<ActionStep>>,
    pub scope: TraceScope,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&ActionStep> {
        self.entries.last().map(Arc::as_ref)
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &ActionStep> + ExactSizeIterator {
        self.entries.iter().map(Arc::as_ref)
    }

    pub fn step_ids(&self) -> Vec<StepId> {
        self.iter().map(|s| s.step_id).collect()
    }

    /// Copy of the trace without the given step.
    pub fn without(&self, step_id: StepId) -> Trace {
        Trace {
            entries: self.entries.iter().filter(|s| s.step_id != step_id).cloned().collect(),
            scope: self.scope.clone(),
        }
    }
}

/// One supervised run: a global task, registered agents and their steps.
#[derive(Debug, Clone)]
pub struct Session {
    pub session_id: SessionId,
    pub global_task: String,
    /// agent name to local task.
    pub agents: BTreeMap<String, String>,
    steps: Vec<Arc<ActionStep>>,
    supervisor_events: Vec<SupervisionEvent>,
    step_ids: HashSet<StepId>,
    clock: u64,
    step_tokens: TokenUsage,
    supervisor_tokens: TokenUsage,
}

impl Session {
    pub fn new(session_id: impl Into<SessionId>, global_task: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            global_task: global_task.into(),
            agents: BTreeMap::new(),
            steps: Vec::new(),
            supervisor_events: Vec::new(),
            step_ids: HashSet::new(),
            clock: 0,
            step_tokens: TokenUsage::ZERO,
            supervisor_tokens: TokenUsage::ZERO,
        }
    }

    pub fn with_agent(mut self, name: impl Into<String>, local_task: impl Into<String>) -> Self {
        self.register_agent(name, local_task);
        self
    }

    pub fn register_agent(&mut self, name: impl Into<String>, local_task: impl Into<String>) {
        self.agents.insert(name.into(), local_task.into());
    }

    pub fn local_task(&self, agent: &str) -> Option<&str> {
        self.agents.get(agent).map(String::as_str)
    }

    pub fn steps(&self) -> impl Iterator<Item = &ActionStep> {
        self.steps.iter().map(Arc::as_ref)
    }

    pub fn step(&self, id: StepId) -> Option<&ActionStep> {
        self.steps.iter().rev().find(|s| s.step_id == id).map(Arc::as_ref)
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn events(&self) -> &[SupervisionEvent] {
        &self.supervisor_events
    }

    /// Smallest step id strictly greater than any id recorded so far.
    pub fn next_step_id(&self) -> StepId {
        StepId(self.step_ids.iter().map(|s| s.0).max().unwrap_or(0) + 1)
    }

    /// Appends a step, stamping it with the next sequence number.
    pub fn record_step(&mut self, mut step: ActionStep) -> Result<StepId, TraceError> {
        if step.session_id != self.session_id {
            return Err(TraceError::SessionMismatch { expected: self.session_id.clone(), found: step.session_id });
        }
        if !self.agents.contains_key(&step.agent_name) {
            return Err(TraceError::UnknownAgent(step.agent_name));
        }
        if self.step_ids.contains(&step.step_id) {
            return Err(TraceError::DuplicateStepId(step.step_id));
        }
        self.clock += 1;
        step.timestamp = self.clock;
        let id = step.step_id;
        self.step_tokens += step.token_usage;
        self.step_ids.insert(id);
        self.steps.push(Arc::new(step));
        Ok(id)
    }

    /// Replaces a recorded step's observations with what the agent actually received.
    pub fn replace_observations(&mut self, id: StepId, observations: String) -> bool {
        match self.steps.iter_mut().rev().find(|s| s.step_id == id) {
            Some(slot) => {
                Arc::make_mut(slot).observations = observations;
                true
            }
            None => false,
        }
    }

    pub fn record_event(&mut self, event: SupervisionEvent) {
        self.supervisor_tokens += event.supervisor_usage;
        self.supervisor_events.push(event);
    }

    /// At most `window` most recent steps of one agent, oldest first.
    pub fn local_trace(&self, agent_name: &str, window: usize) -> Result<Trace, TraceError> {
        if !self.agents.contains_key(agent_name) {
            return Err(TraceError::UnknownAgent(agent_name.to_string()));
        }
        let mut entries: Vec<_> =
            self.steps.iter().rev().filter(|s| s.agent_name == agent_name).take(window).cloned().collect();
        entries.reverse();
        Ok(Trace { entries, scope: TraceScope::Local(agent_name.to_string()) })
    }

    pub fn global_trace(&self) -> Trace {
        // record order is timestamp order; the sort keeps that explicit
        let mut entries = self.steps.clone();
        entries.sort_by_key(|s| s.timestamp);
        Trace { entries, scope: TraceScope::Global }
    }

    pub fn step_tokens(&self) -> TokenUsage {
        self.step_tokens
    }

    pub fn supervisor_tokens(&self) -> TokenUsage {
        self.supervisor_tokens
    }

    pub fn total_tokens(&self) -> u64 {
        self.step_tokens.total + self.supervisor_tokens.total
    }
}

/// Pluggable token counter; [`CharHeuristic`] is used when none is supplied.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// `ceil(chars / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharHeuristic;

impl TokenCounter for CharHeuristic {
    fn count(&self, text: &str) -> u64 {
        (text.chars().count() as u64).div_ceil(4)
    }
}

pub fn estimate_tokens(text: &str) -> u64 {
    CharHeuristic.count(text)
}
