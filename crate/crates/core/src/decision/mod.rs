//! Prompting, backend invocation, reply parsing and action-space validation.

mod action;
pub mod backend;
mod engine;
mod parse;
pub mod prompt;

pub use action::{ActionSpace, DecisionParameters, Rejection, SupervisionAction, SupervisionDecision};
pub use backend::{BackendConfig, BackendError, BackendHandle, BackendKind, DecisionBackend};
pub use engine::{
    fallback_decision, DecisionEngine, DecisionError, DecisionOutcome, DecisionPolicy, DecisionPolicyPatch,
    DecisionRequest, FallbackMode,
};
pub use parse::{parse_decision, ParseFailure};
pub use prompt::{build_prompt, PromptError, PromptInputs};
