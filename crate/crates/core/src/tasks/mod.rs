//! Task suites and their verifiers.
//!
//! Every verifier is a total, pure function from `(problem, answer)` to a
//! utility in `[0, 1]` plus a machine-readable reason. Malformed answers
//! score 0; nothing panics on adversarial input.

pub mod collie;
pub mod countdown;
pub mod creativity;
pub mod extract;
pub mod typos;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use creativity::EmbeddingTable;
pub use extract::{extract_structured_answer, AnswerFormat, ExtractError, Extracted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Countdown,
    Creativity,
    Collie,
    Typos,
    /// External datasets graded by exact match after structured extraction.
    Extracted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub payload: serde_json::Value,
    pub task: TaskKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub score: f64,
    pub reason: String,
}

impl VerifierReport {
    pub fn pass(reason: impl Into<String>) -> Self {
        Self { score: 1.0, reason: reason.into() }
    }

    pub fn fail(reason: impl Into<String>) -> Self {
        Self { score: 0.0, reason: reason.into() }
    }
}

pub trait Verifier: Send + Sync {
    fn verify(&self, problem: &Problem, answer: &str) -> VerifierReport;

    fn max_score(&self) -> f64 {
        1.0
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("embedding file {path}:{line}: {msg}")]
    Embedding { path: String, line: usize, msg: String },
}

/// Dispatches on [`Problem::task`]. Creativity problems need an embedding
/// table; without one they score 0.
#[derive(Clone, Default)]
pub struct TaskVerifier {
    embeddings: Option<Arc<EmbeddingTable>>,
}

impl TaskVerifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_embeddings(table: Arc<EmbeddingTable>) -> Self {
        Self { embeddings: Some(table) }
    }
}

impl Verifier for TaskVerifier {
    fn verify(&self, problem: &Problem, answer: &str) -> VerifierReport {
        match problem.task {
            TaskKind::Countdown => countdown::verify(problem, answer),
            TaskKind::Collie => collie::verify(problem, answer),
            TaskKind::Typos => typos::verify(problem, answer),
            TaskKind::Extracted => extract::verify(problem, answer),
            TaskKind::Creativity => match &self.embeddings {
                Some(t) => creativity::verify(problem, answer, t),
                None => VerifierReport::fail("no embedding table loaded"),
            },
        }
    }
}

/// Text between the last `<answer>` / `</answer>` pair, or the whole answer
/// when the tags are absent.
pub fn answer_region(answer: &str) -> &str {
    if let Some(end) = answer.rfind("</answer>") {
        if let Some(start) = answer[..end].rfind("<answer>") {
            return &answer[start + "<answer>".len()..end];
        }
    }
    answer
}

pub fn load_problems(path: impl AsRef<Path>) -> Result<Vec<Problem>, TaskError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| TaskError::Io { path: display.clone(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TaskError::Io { path: display.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line)
            .map_err(|source| TaskError::Parse { path: display.clone(), line: i + 1, source })?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_problems(path: impl AsRef<Path>, problems: &[Problem]) -> std::io::Result<()> {
    let mut f = File::create(path)?;
    for p in problems {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}
