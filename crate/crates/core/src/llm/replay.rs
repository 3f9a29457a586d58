use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatTurn, CompletionRequest, CompletionResult, LanguageModel, LmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub text: String,
    pub output_tokens: u64,
    /// Seconds reported as call latency.
    #[serde(default)]
    pub latency: f64,
}

impl ScriptEntry {
    pub fn new(text: impl Into<String>, output_tokens: u64, latency: f64) -> Self {
        Self { text: text.into(), output_tokens, latency }
    }
}

/// Pops scripted responses in order and records every conversation it was
/// shown. Meant for a single episode.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    script: Mutex<VecDeque<ScriptEntry>>,
    seen: Mutex<Vec<Vec<ChatTurn>>>,
}

impl ReplayBackend {
    pub fn new(script: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self {
            script: Mutex::new(script.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Conversations passed to each `complete` call, in call order.
    pub fn conversations(&self) -> Vec<Vec<ChatTurn>> {
        self.seen.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.seen.lock().unwrap().len()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl LanguageModel for ReplayBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, LmError> {
        self.seen.lock().unwrap().push(request.conversation.to_vec());
        let entry = self
            .script
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(LmError::ExhaustedScript)?;
        Ok(CompletionResult {
            text: entry.text,
            output_tokens: entry.output_tokens,
            latency: entry.latency,
            tokens_estimated: false,
        })
    }
}

/// Backend driven by a pure function of the request. Shareable across
/// parallel episodes as long as the function is deterministic.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&CompletionRequest<'_>) -> Result<CompletionResult, LmError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> LanguageModel for FnBackend<F>
where
    F: Fn(&CompletionRequest<'_>) -> Result<CompletionResult, LmError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, LmError> {
        (self.f)(request)
    }
}
