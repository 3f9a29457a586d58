//! Budgeted multi-turn reasoning with executable code cells, few-shot
//! example selection from self-generated traces, task verifiers, and an
//! evaluation harness.

pub mod budget;
pub mod harness;
pub mod learn;
pub mod llm;
pub mod orchestrator;
pub mod protocol;
pub mod tasks;
pub mod workspace;

pub use budget::{BudgetLimits, BudgetState};
pub use learn::{Candidate, ExampleSet, LearnConfig};
pub use llm::{ChatTurn, CompletionRequest, CompletionResult, LanguageModel, LmError, Role};
pub use orchestrator::{solve, Episode, Mode, Outcome, Trace};
pub use protocol::{parse_agent_message, AgentMessage, CellResult, CellStatus, CodeCell, ParseOutcome};
pub use tasks::{Problem, TaskKind, Verifier, VerifierReport};
pub use workspace::{WorkspaceFactory, WorkspaceSession};
