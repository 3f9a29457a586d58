use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use super::{CellExecutor, ExecOutcome, ResolveError, WorkspaceError, WorkspaceFactory, WorkspaceSession};
use crate::protocol::{CellResult, CellStatus, CodeCell};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarValue {
    Str(String),
    /// A non-string value; the payload is its type name.
    Other(String),
}

/// Scripted result for one execution of a named cell, plus the variables it
/// defines when it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedCell {
    outcome: ExecOutcome,
    binds: Vec<(String, VarValue)>,
}

impl ScriptedCell {
    pub fn ok(stdout: impl Into<String>, duration: f64) -> Self {
        Self::finished(CellStatus::Ok, stdout.into(), None, duration)
    }

    pub fn error(stdout: impl Into<String>, trace: impl Into<String>, duration: f64) -> Self {
        Self::finished(CellStatus::Error, stdout.into(), Some(trace.into()), duration)
    }

    pub fn interrupted(stdout: impl Into<String>, reason: impl Into<String>, duration: f64) -> Self {
        Self::finished(CellStatus::Interrupted, stdout.into(), Some(reason.into()), duration)
    }

    pub fn dead() -> Self {
        Self { outcome: ExecOutcome::WorkerDead { duration: 0.0 }, binds: Vec::new() }
    }

    /// Replays a recorded display result verbatim.
    pub fn from_result(r: &CellResult) -> Self {
        Self::finished(r.status, r.output.clone(), r.error_trace.clone(), r.duration)
    }

    fn finished(status: CellStatus, stdout: String, error_trace: Option<String>, duration: f64) -> Self {
        Self {
            outcome: ExecOutcome::Finished { status, stdout, error_trace, duration },
            binds: Vec::new(),
        }
    }

    pub fn binds(mut self, name: impl Into<String>, value: VarValue) -> Self {
        self.binds.push((name.into(), value));
        self
    }
}

/// Executor that answers from a script keyed by cell name. Each name holds a
/// queue; the last entry repeats once the queue is down to one. Unknown
/// cells succeed silently in zero time.
#[derive(Debug, Clone, Default)]
pub struct ScriptedExecutor {
    script: HashMap<String, VecDeque<ScriptedCell>>,
    vars: HashMap<String, VarValue>,
    executed: Vec<String>,
}

impl ScriptedExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on(mut self, name: impl Into<String>, cell: ScriptedCell) -> Self {
        self.script.entry(name.into()).or_default().push_back(cell);
        self
    }

    pub fn with_var(mut self, name: impl Into<String>, value: VarValue) -> Self {
        self.vars.insert(name.into(), value);
        self
    }

    /// Names of executed cells, in order.
    pub fn executed(&self) -> &[String] {
        &self.executed
    }
}

impl CellExecutor for ScriptedExecutor {
    fn execute(&mut self, cell: &CodeCell, _timeout: f64) -> ExecOutcome {
        self.executed.push(cell.name.clone());
        let scripted = match self.script.get_mut(&cell.name) {
            Some(q) if q.len() > 1 => q.pop_front(),
            Some(q) => q.front().cloned(),
            None => None,
        };
        let Some(scripted) = scripted else {
            return ExecOutcome::Finished {
                status: CellStatus::Ok,
                stdout: String::new(),
                error_trace: None,
                duration: 0.0,
            };
        };
        if matches!(scripted.outcome, ExecOutcome::WorkerDead { .. }) {
            self.vars.clear();
        }
        for (k, v) in scripted.binds {
            self.vars.insert(k, v);
        }
        scripted.outcome
    }

    fn resolve_variable(&mut self, name: &str) -> Result<String, ResolveError> {
        match self.vars.get(name) {
            Some(VarValue::Str(s)) => Ok(s.clone()),
            Some(VarValue::Other(_)) => Err(ResolveError::NotAString(name.into())),
            None => Err(ResolveError::Undefined(name.into())),
        }
    }
}

/// Hands every episode a clone of a template executor, or a per-episode
/// executor when one is registered for that id.
#[derive(Clone, Default)]
pub struct ScriptedFactory {
    template: ScriptedExecutor,
    per_episode: Arc<HashMap<String, ScriptedExecutor>>,
}

impl ScriptedFactory {
    pub fn new(template: ScriptedExecutor) -> Self {
        Self { template, per_episode: Arc::new(HashMap::new()) }
    }

    pub fn with_episodes(template: ScriptedExecutor, per_episode: HashMap<String, ScriptedExecutor>) -> Self {
        Self { template, per_episode: Arc::new(per_episode) }
    }
}

impl WorkspaceFactory for ScriptedFactory {
    fn create(&self, episode_id: &str) -> Result<WorkspaceSession, WorkspaceError> {
        let exec = self
            .per_episode
            .get(episode_id)
            .cloned()
            .unwrap_or_else(|| self.template.clone());
        Ok(WorkspaceSession::new(episode_id, Box::new(exec)))
    }
}
