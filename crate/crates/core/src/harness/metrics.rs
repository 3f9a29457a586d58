//! Quantitative per-trace features: tokens, turns, cells, errors, and how
//! much of the assistant's text lives inside code cells.

use serde::{Deserialize, Serialize};

use crate::llm::{ChatTurn, Role};
use crate::orchestrator::Trace;
use crate::protocol::{parse_agent_message, CellStatus};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub episode_id: String,
    pub problem_id: String,
    pub output_tokens: u64,
    pub turns: u32,
    pub cells: usize,
    pub error_cells: usize,
    pub code_chars: usize,
    pub assistant_chars: usize,
    /// Code-cell characters / assistant characters, in [0, 1].
    pub code_reasoning_ratio: f64,
}

/// Character counts over the assistant turns of a conversation.
pub fn conversation_metrics(conversation: &[ChatTurn]) -> TraceMetrics {
    let mut m = TraceMetrics::default();
    for turn in conversation.iter().filter(|t| t.role == Role::Assistant) {
        m.assistant_chars += turn.content.chars().count();
        if let Some(msg) = parse_agent_message(&turn.content).message() {
            m.cells += msg.cells.len();
            m.code_chars += msg.cells.iter().map(|c| c.source.chars().count()).sum::<usize>();
        }
    }
    m.code_reasoning_ratio = if m.assistant_chars == 0 {
        0.0
    } else {
        (m.code_chars as f64 / m.assistant_chars as f64).min(1.0)
    };
    m
}

pub fn trace_metrics(trace: &Trace) -> TraceMetrics {
    TraceMetrics {
        episode_id: trace.episode_id.clone(),
        problem_id: trace.problem_id.clone(),
        output_tokens: trace.budget_final.tokens_used,
        turns: trace.budget_final.turns_used,
        error_cells: trace.cell_results.iter().filter(|r| r.status != CellStatus::Ok).count(),
        ..conversation_metrics(&trace.conversation)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub traces: usize,
    pub mean_tokens: f64,
    pub mean_turns: f64,
    pub mean_cells: f64,
    pub mean_error_cells: f64,
    pub mean_code_reasoning_ratio: f64,
}

pub fn summarize(rows: &[TraceMetrics]) -> MetricsSummary {
    let n = rows.len();
    if n == 0 {
        return MetricsSummary::default();
    }
    let mean = |f: fn(&TraceMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n as f64;
    MetricsSummary {
        traces: n,
        mean_tokens: mean(|r| r.output_tokens as f64),
        mean_turns: mean(|r| f64::from(r.turns)),
        mean_cells: mean(|r| r.cells as f64),
        mean_error_cells: mean(|r| r.error_cells as f64),
        mean_code_reasoning_ratio: mean(|r| r.code_reasoning_ratio),
    }
}
