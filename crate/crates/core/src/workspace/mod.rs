//! The engine-side code module.
//!
//! A [`WorkspaceSession`] owns one executor for the lifetime of an episode,
//! runs a message's cells in order under a shared deadline, truncates
//! output for display, and resolves return directives. Executors are either
//! a sandboxed interpreter process ([`KernelClient`]) or a scripted stub
//! ([`ScriptedExecutor`]) for tests and replays.

mod kernel;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    tail_lines, truncate_output, AgentMessage, CellResult, CellStatus, CodeCell, ReturnDirective,
    ReturnKind,
};

pub use kernel::{
    read_frame, write_frame, ExecOp, ExecRequest, ExecResponse, ExecStatus, KernelClient,
    KernelCommand, PROTOCOL_VERSION,
};
pub use scripted::{ScriptedCell, ScriptedExecutor, ScriptedFactory, VarValue};

pub const DEFAULT_LINE_CAP: usize = 100;
pub const DEFAULT_TRACE_CAP: usize = 50;

pub const SKIPPED_TEXT: &str = "Skipped: total compute budget exhausted";
pub const WORKER_RESTART_TEXT: &str =
    "The code workspace crashed while running this cell and was restarted. All variables were lost.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("variable '{0}' is undefined")]
    Undefined(String),
    #[error("variable '{0}' is not a string")]
    NotAString(String),
    #[error("workspace failure: {0}")]
    Workspace(String),
}

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("failed to start worker: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("worker protocol error: {0}")]
    Protocol(String),
}

/// Error text for a cell killed at its deadline.
pub fn timeout_message(secs: f64) -> String {
    format!(
        "Time limit exceeded: execution took longer than {secs:.0} secs. \
         The workspace was restarted and all variables were lost."
    )
}

/// What an executor reports for one cell, before display shaping.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecOutcome {
    Finished {
        status: CellStatus,
        stdout: String,
        error_trace: Option<String>,
        duration: f64,
    },
    /// The worker process died; the executor has already been restarted.
    WorkerDead { duration: f64 },
}

pub trait CellExecutor: Send {
    /// Runs one cell with a wall-clock limit in seconds.
    fn execute(&mut self, cell: &CodeCell, timeout: f64) -> ExecOutcome;
    fn resolve_variable(&mut self, name: &str) -> Result<String, ResolveError>;
}

pub struct WorkspaceSession {
    episode_id: String,
    registry: Vec<(String, String)>,
    executor: Box<dyn CellExecutor>,
    line_cap: usize,
    trace_cap: usize,
}

impl WorkspaceSession {
    pub fn new(episode_id: impl Into<String>, executor: Box<dyn CellExecutor>) -> Self {
        Self {
            episode_id: episode_id.into(),
            registry: Vec::new(),
            executor,
            line_cap: DEFAULT_LINE_CAP,
            trace_cap: DEFAULT_TRACE_CAP,
        }
    }

    pub fn with_line_cap(mut self, cap: usize) -> Self {
        self.line_cap = cap;
        self
    }

    pub fn episode_id(&self) -> &str {
        &self.episode_id
    }

    /// Latest source per cell name, in first-definition order.
    pub fn cells(&self) -> &[(String, String)] {
        &self.registry
    }

    fn register(&mut self, cell: &CodeCell) {
        match self.registry.iter_mut().find(|(n, _)| *n == cell.name) {
            Some(entry) => entry.1 = cell.source.clone(),
            None => self.registry.push((cell.name.clone(), cell.source.clone())),
        }
    }

    /// Executes the message's cells in order. `deadline` (seconds) is shared
    /// by all cells; once it is spent the remaining cells are reported as
    /// skipped.
    pub fn run_message_cells(&mut self, msg: &AgentMessage, deadline: f64) -> Vec<CellResult> {
        let mut results = Vec::with_capacity(msg.cells.len());
        let mut spent = 0.0;
        for cell in &msg.cells {
            let remaining = deadline - spent;
            if remaining <= 0.0 {
                results.push(CellResult::error(&cell.name, "", SKIPPED_TEXT, 0.0));
                continue;
            }
            self.register(cell);
            match self.executor.execute(cell, remaining) {
                ExecOutcome::Finished { status, stdout, error_trace, duration } => {
                    spent += duration;
                    let output = truncate_output(&stdout, self.line_cap);
                    let error_trace = match status {
                        CellStatus::Ok => None,
                        _ => Some(tail_lines(
                            error_trace.as_deref().unwrap_or("Unknown error"),
                            self.trace_cap,
                        )),
                    };
                    results.push(CellResult {
                        cell_name: cell.name.clone(),
                        status,
                        output,
                        error_trace,
                        duration,
                    });
                }
                ExecOutcome::WorkerDead { duration } => {
                    results.push(CellResult::error(&cell.name, "", WORKER_RESTART_TEXT, duration));
                    break;
                }
            }
        }
        results
    }

    /// Inline text is trimmed; a variable reference is looked up in the workspace.
    pub fn resolve_return(&mut self, rd: &ReturnDirective) -> Result<String, ResolveError> {
        match rd.kind {
            ReturnKind::InlineText => Ok(rd.payload.trim().to_string()),
            ReturnKind::VariableRef => self.executor.resolve_variable(&rd.payload),
        }
    }
}

/// Creates one session per episode.
pub trait WorkspaceFactory: Send + Sync {
    fn create(&self, episode_id: &str) -> Result<WorkspaceSession, WorkspaceError>;
}

/// Spawns a fresh sandbox worker per episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelFactory {
    pub command: KernelCommand,
    #[serde(default = "default_line_cap")]
    pub line_cap: usize,
}

fn default_line_cap() -> usize {
    DEFAULT_LINE_CAP
}

impl WorkspaceFactory for KernelFactory {
    fn create(&self, episode_id: &str) -> Result<WorkspaceSession, WorkspaceError> {
        let client = KernelClient::spawn(self.command.clone())?;
        Ok(WorkspaceSession::new(episode_id, Box::new(client)).with_line_cap(self.line_cap))
    }
}
