//! A file-driven deterministic backend. Responses are keyed by episode id,
//! then by the id of the problem being solved, then a default; the entry
//! used is the number of assistant turns already in the conversation.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::llm::{CompletionRequest, CompletionResult, LanguageModel, LmError, Role, ScriptEntry};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptBook {
    pub episodes: HashMap<String, Vec<ScriptEntry>>,
    pub problems: HashMap<String, Vec<ScriptEntry>>,
    pub default: Vec<ScriptEntry>,
}

/// The problem an episode id is solving: `eval/{p}`, `train/{p}/{j}`, or
/// `gen/{src}/{j}/{p}`. Assumes problem ids contain no `/`.
pub fn target_problem(episode_id: &str) -> Option<&str> {
    let parts: Vec<&str> = episode_id.split('/').collect();
    match parts.as_slice() {
        ["eval", p] | ["train", p, _] | ["gen", _, _, p] => Some(p),
        _ => None,
    }
}

impl ScriptBook {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    fn entries(&self, episode_id: &str) -> &[ScriptEntry] {
        if let Some(e) = self.episodes.get(episode_id) {
            return e;
        }
        if let Some(e) = target_problem(episode_id).and_then(|p| self.problems.get(p)) {
            return e;
        }
        &self.default
    }
}

impl LanguageModel for ScriptBook {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, LmError> {
        let step = request.conversation.iter().filter(|t| t.role == Role::Assistant).count();
        let entry = self.entries(request.episode_id).get(step).ok_or(LmError::ExhaustedScript)?;
        Ok(CompletionResult {
            text: entry.text.clone(),
            output_tokens: entry.output_tokens,
            latency: entry.latency,
            tokens_estimated: false,
        })
    }
}
