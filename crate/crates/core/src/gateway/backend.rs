use futures::future::BoxFuture;

use super::{AgentKind, TokenUsage};

/// One earlier malformed answer and the validation error it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairTurn {
    pub previous: String,
    pub error: String,
}

/// A single backend invocation. `attempt` is 0 for the first call and
/// counts repair re-prompts after that.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendCall {
    pub agent_kind: AgentKind,
    pub model: String,
    pub system_prompt: String,
    pub user_payload: String,
    pub seed: u64,
    pub attempt: u32,
    pub repairs: Vec<RepairTurn>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCompletion {
    pub text: String,
    /// Backend-reported usage; estimated by the gateway when absent.
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum BackendError {
    #[error("{0}")]
    Unavailable(String),
    #[error("timed out")]
    Timeout,
}

pub trait ChatBackend: Send + Sync {
    fn chat<'a>(&'a self, call: &'a BackendCall) -> BoxFuture<'a, Result<RawCompletion, BackendError>>;
}
