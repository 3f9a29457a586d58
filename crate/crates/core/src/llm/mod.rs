//! Language-model backends.
//!
//! [`HttpBackend`] talks to any OpenAI-compatible chat-completions endpoint.
//! [`ReplayBackend`] and [`FnBackend`] are deterministic stand-ins used by
//! tests, fixtures, and trace replay.

mod http;
mod replay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, LmConfig};
pub use replay::{FnBackend, ReplayBackend, ScriptEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// One call into a backend. `episode_id` lets deterministic backends key
/// their responses; HTTP backends ignore it.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub episode_id: &'a str,
    pub conversation: &'a [ChatTurn],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub output_tokens: u64,
    /// Seconds.
    pub latency: f64,
    /// True when the provider omitted usage and the count is estimated.
    #[serde(default)]
    pub tokens_estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("request timed out after {0} attempts")]
    Timeout(u32),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("replay script exhausted")]
    ExhaustedScript,
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, LmError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, LmError> {
        (**self).complete(request)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, LmError> {
        (**self).complete(request)
    }
}

/// Fallback when a provider reports no usage: one token per four bytes,
/// rounded up. Approximate.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}
