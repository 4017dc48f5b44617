//! Runtime supervision for multi-agent LLM systems.
//!
//! Every agent step passes through an LLM-free [`filter`]. Only steps that
//! trip a trigger are escalated: the [`context`] aggregator assembles what the
//! supervisor needs to know, the [`decision`] engine asks a backend for a
//! constrained action, and the [`executor`] applies it to the step before it
//! reaches the agent. [`service`] wires this up behind HTTP or stdio and
//! keeps an append-only log per session; [`harness`] replays and simulates
//! sessions offline.

pub mod config;
pub mod context;
pub mod decision;
pub mod executor;
pub mod filter;
pub mod harness;
pub mod purify;
pub mod service;
pub mod trace;

pub use config::{ConfigError, ServiceConfig, SupervisorConfig};
pub use context::{build_context, ContextWindow, RenderLimits, RenderLimitsPatch};
pub use decision::{
    ActionSpace, BackendConfig, BackendError, BackendHandle, BackendKind, DecisionBackend, DecisionEngine,
    DecisionPolicy, FallbackMode, SupervisionAction, SupervisionDecision,
};
pub use executor::{apply, EventId, EventOutcome, SupervisionEvent, CORRECTION_NOTE, GUIDANCE_MARKER};
pub use filter::{classify, FilterConfig, FilterConfigPatch, InefficiencyKind, TriggerDecision, TriggerKind};
pub use purify::{detect_kind, purify, ContentKind, PurifiedObservation};
pub use trace::{estimate_tokens, ActionStep, Session, SessionId, StepId, TokenUsage, ToolCall, Trace};
