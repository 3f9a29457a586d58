//! The reasoning loop: prompt assembly, LM call, parse, execute, feedback,
//! termination, the final-guess turn, retry in context, and trace recording.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{low_turn_warning, render_budget_report, BudgetLimits, BudgetState};
use crate::llm::ScriptEntry;
use crate::llm::{ChatTurn, CompletionRequest, CompletionResult, LanguageModel, Role};
use crate::protocol::{
    parse_agent_message, render_feedback, render_nudge_turn, CellResult, ParseIssue, ParseOutcome,
};
use crate::tasks::{Problem, Verifier};
use crate::workspace::WorkspaceSession;

pub const TRACE_SCHEMA: u32 = 1;

const SYSTEM_PROMPT: &str = include_str!("../prompts/system.txt");
const CODE_INSTRUCTIONS: &str = include_str!("../prompts/code_instructions.txt");

pub const EXAMPLES_PREAMBLE: &str = "Please use these examples as inspirations to solve the problem, \
                                     while being creative, flexible, and adaptive. ";
pub const FINAL_GUESS_TEXT: &str =
    "Budget exhausted. You must now return your best final answer using <return>…</return> only.";
pub const COT_INSTRUCTION: &str = "Solve this problem. Let's think step by step. After working through \
                                   your reasoning, put your answer in the last line of your response \
                                   after \"Answer:\". Don't output anything afterwards.";

pub fn system_prompt() -> &'static str {
    SYSTEM_PROMPT.trim_end_matches('\n')
}

pub fn code_instructions() -> &'static str {
    CODE_INSTRUCTIONS.trim()
}

pub fn retry_prompt(score: f64) -> String {
    format!(
        "Your returned answer scored {score}/1.0. Please continue reasoning in this same session and \
         return an improved answer."
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    CodeActLoop,
    CoTSingleShot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub problem: Problem,
    /// Rendered example transcripts; empty for learning episodes.
    pub examples: Vec<String>,
    pub limits: BudgetLimits,
    pub mode: Mode,
}

impl Episode {
    pub fn new(id: impl Into<String>, problem: Problem, limits: BudgetLimits) -> Self {
        Self { id: id.into(), problem, examples: Vec::new(), limits, mode: Mode::CodeActLoop }
    }

    pub fn with_examples(mut self, examples: Vec<String>) -> Self {
        self.examples = examples;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Answered,
    BudgetExhausted,
    Aborted,
}

/// Resources of one assistant turn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnUsage {
    pub output_tokens: u64,
    pub latency: f64,
    /// Summed cell durations charged after this turn.
    pub exec_time: f64,
    #[serde(default)]
    pub tokens_estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub schema: u32,
    pub episode_id: String,
    pub problem_id: String,
    pub mode: Mode,
    pub conversation: Vec<ChatTurn>,
    /// One entry per assistant turn.
    pub usage: Vec<TurnUsage>,
    pub cell_results: Vec<CellResult>,
    pub answer: Option<String>,
    pub budget_final: BudgetState,
    pub outcome: Outcome,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub reason: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
    /// True when the last assistant turn answered the final-guess prompt.
    #[serde(default)]
    pub final_guess: bool,
    #[serde(default)]
    pub retries: u32,
}

impl Trace {
    fn start(ep: &Episode, conversation: Vec<ChatTurn>) -> Self {
        Self {
            schema: TRACE_SCHEMA,
            episode_id: ep.id.clone(),
            problem_id: ep.problem.id.clone(),
            mode: ep.mode,
            conversation,
            usage: Vec::new(),
            cell_results: Vec::new(),
            answer: None,
            budget_final: BudgetState::new(),
            outcome: Outcome::BudgetExhausted,
            score: None,
            reason: None,
            error: None,
            final_guess: false,
            retries: 0,
        }
    }

    /// An aborted trace for an episode that never reached the model.
    pub fn failed(ep: &Episode, error: String) -> Self {
        let mut t = Self::start(ep, assemble_prompt(&ep.problem, &ep.examples, ep.mode));
        t.outcome = Outcome::Aborted;
        t.error = Some(error);
        t
    }

    pub fn assistant_messages(&self) -> impl Iterator<Item = &str> {
        self.conversation
            .iter()
            .filter(|t| t.role == Role::Assistant)
            .map(|t| t.content.as_str())
    }

    pub fn tokens_estimated(&self) -> bool {
        self.usage.iter().any(|u| u.tokens_estimated)
    }

    /// Backend script that reproduces this trace's assistant turns.
    pub fn replay_script(&self) -> Vec<ScriptEntry> {
        self.assistant_messages()
            .zip(&self.usage)
            .map(|(text, u)| ScriptEntry::new(text, u.output_tokens, u.latency))
            .collect()
    }

    /// Applies a verifier to the answer; no answer scores 0.
    pub fn score_with(&mut self, verifier: &dyn Verifier, problem: &Problem) {
        let report = match &self.answer {
            Some(a) => verifier.verify(problem, a),
            None => crate::tasks::VerifierReport::fail(match self.outcome {
                Outcome::Aborted => "episode aborted",
                _ => "no answer returned",
            }),
        };
        self.score = Some(report.score);
        self.reason = Some(report.reason);
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetryError {
    #[error("retry needs an answered trace")]
    NotAnswered,
    #[error("retry needs a scored trace")]
    Unscored,
    #[error("score {0} is already the maximum")]
    AlreadyPerfect(f64),
    #[error("retry only applies to the code loop")]
    WrongMode,
}

/// Result of one retry: the trace kept under the strictly-better rule, and
/// the extended attempt itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Retry {
    pub kept: Trace,
    pub attempt: Trace,
    pub improved: bool,
}

pub fn assemble_prompt(problem: &Problem, examples: &[String], mode: Mode) -> Vec<ChatTurn> {
    match mode {
        Mode::CoTSingleShot => {
            let mut user = String::new();
            for ex in examples {
                user.push_str(ex);
                user.push_str("\n\n");
            }
            user.push_str(&format!("# NEW PROBLEM\n\n{}\n\n{COT_INSTRUCTION}", problem.prompt));
            vec![ChatTurn::user(user)]
        }
        Mode::CodeActLoop => {
            let user = if examples.is_empty() {
                format!("{}\n\n# NEW PROBLEM\n\n{}", code_instructions(), problem.prompt)
            } else {
                format!(
                    "{}\n\n{EXAMPLES_PREAMBLE}{}\n\n# NEW PROBLEM\n\n{}",
                    examples.join("\n\n"),
                    code_instructions(),
                    problem.prompt
                )
            };
            vec![ChatTurn::system(system_prompt()), ChatTurn::user(user)]
        }
    }
}

/// Text after the last "Answer:" on its line; falls back to the last
/// non-empty line when the marker is missing.
pub fn cot_answer(text: &str) -> Option<String> {
    if let Some(at) = text.rfind("Answer:") {
        let line = text[at + "Answer:".len()..].lines().next().unwrap_or("").trim();
        return (!line.is_empty()).then(|| line.to_string());
    }
    text.lines().rev().map(str::trim).find(|l| !l.is_empty()).map(str::to_string)
}

struct Runner<'a, L: ?Sized> {
    ep: &'a Episode,
    lm: &'a L,
    trace: Trace,
}

impl<'a, L: LanguageModel + ?Sized> Runner<'a, L> {
    fn limits(&self) -> &BudgetLimits {
        &self.ep.limits
    }

    fn call(&mut self) -> Option<CompletionResult> {
        let req = CompletionRequest { episode_id: &self.ep.id, conversation: &self.trace.conversation };
        match self.lm.complete(&req) {
            Ok(res) => {
                self.trace.conversation.push(ChatTurn::assistant(&res.text));
                self.trace.budget_final =
                    self.trace.budget_final.charge(res.output_tokens, res.latency, 1);
                self.trace.usage.push(TurnUsage {
                    output_tokens: res.output_tokens,
                    latency: res.latency,
                    exec_time: 0.0,
                    tokens_estimated: res.tokens_estimated,
                });
                Some(res)
            }
            Err(e) => {
                tracing::warn!(episode = %self.ep.id, error = %e, "backend call failed");
                self.trace.outcome = Outcome::Aborted;
                self.trace.answer = None;
                self.trace.error = Some(e.to_string());
                None
            }
        }
    }

    fn report(&self) -> (String, Vec<String>) {
        let b = &self.trace.budget_final;
        (render_budget_report(b, self.limits()), low_turn_warning(b, self.limits()).into_iter().collect())
    }

    fn answered(&mut self, answer: String) {
        self.trace.answer = Some(answer);
        self.trace.outcome = Outcome::Answered;
    }

    /// Runs turns until an answer, exhaustion, or a backend failure.
    /// The conversation must end with a user turn.
    fn run(&mut self, ws: &mut WorkspaceSession) {
        loop {
            let Some(res) = self.call() else { return };
            let feedback = match parse_agent_message(&res.text) {
                ParseOutcome::NudgeRequired { issues } => {
                    let (report, warnings) = self.report();
                    render_nudge_turn(&with_issues(&issues, report), &warnings)
                }
                ParseOutcome::Message { message, issues } => {
                    let mut shown = if message.cells.is_empty() {
                        Vec::new()
                    } else {
                        let deadline = self.trace.budget_final.turn_deadline(self.limits());
                        ws.run_message_cells(&message, deadline)
                    };
                    let exec: f64 = shown.iter().map(|r| r.duration).sum();
                    self.trace.budget_final = self.trace.budget_final.charge(0, exec, 0);
                    if let Some(u) = self.trace.usage.last_mut() {
                        u.exec_time = exec;
                    }
                    self.trace.cell_results.extend(shown.iter().cloned());
                    if let Some(rd) = &message.return_directive {
                        match ws.resolve_return(rd) {
                            Ok(answer) => return self.answered(answer),
                            Err(e) => shown.push(CellResult::error("return", "", e.to_string(), 0.0)),
                        }
                    }
                    let (report, warnings) = self.report();
                    render_feedback(&shown, &with_issues(&issues, report), &warnings)
                }
            };
            if self.trace.budget_final.is_exhausted(self.limits()) {
                return self.final_guess(ws, feedback);
            }
            self.trace.conversation.push(ChatTurn::user(feedback));
        }
    }

    /// One last completion; cells in it are not executed.
    fn final_guess(&mut self, ws: &mut WorkspaceSession, feedback: String) {
        self.trace
            .conversation
            .push(ChatTurn::user(format!("{feedback}\n\n{FINAL_GUESS_TEXT}")));
        self.trace.final_guess = true;
        let Some(res) = self.call() else { return };
        let rd = parse_agent_message(&res.text)
            .message()
            .and_then(|m| m.return_directive.clone());
        match rd.map(|rd| ws.resolve_return(&rd)) {
            Some(Ok(answer)) => self.answered(answer),
            _ => {
                self.trace.outcome = Outcome::BudgetExhausted;
                self.trace.answer = None;
            }
        }
    }
}

/// Parse problems go on their own lines just above the budget report.
fn with_issues(issues: &[ParseIssue], report: String) -> String {
    if issues.is_empty() {
        return report;
    }
    let mut lines: Vec<String> = issues.iter().map(ParseIssue::describe).collect();
    lines.push(String::new());
    lines.push(report);
    lines.join("\n")
}

/// Runs one episode from a fresh budget. CoT episodes make a single call and
/// never touch the workspace.
pub fn solve<L: LanguageModel + ?Sized>(ep: &Episode, lm: &L, ws: &mut WorkspaceSession) -> Trace {
    let conversation = assemble_prompt(&ep.problem, &ep.examples, ep.mode);
    let mut runner = Runner { ep, lm, trace: Trace::start(ep, conversation) };
    match ep.mode {
        Mode::CodeActLoop => runner.run(ws),
        Mode::CoTSingleShot => {
            if let Some(res) = runner.call() {
                match cot_answer(&res.text) {
                    Some(a) => runner.answered(a),
                    None => runner.trace.outcome = Outcome::BudgetExhausted,
                }
            }
        }
    }
    runner.trace
}

/// Continues a scored, imperfect trace in the same session and budget,
/// telling the model its score. The attempt replaces the original only when
/// its score is strictly higher.
pub fn retry_in_context<L: LanguageModel + ?Sized>(
    ep: &Episode,
    trace: &Trace,
    lm: &L,
    ws: &mut WorkspaceSession,
    verifier: &dyn Verifier,
) -> Result<Retry, RetryError> {
    if ep.mode != Mode::CodeActLoop {
        return Err(RetryError::WrongMode);
    }
    if trace.outcome != Outcome::Answered {
        return Err(RetryError::NotAnswered);
    }
    let score = trace.score.ok_or(RetryError::Unscored)?;
    if score >= verifier.max_score() {
        return Err(RetryError::AlreadyPerfect(score));
    }
    let mut runner = Runner { ep, lm, trace: trace.clone() };
    runner.trace.retries += 1;
    runner.trace.score = None;
    runner.trace.reason = None;
    let (report, warnings) = runner.report();
    let mut prompt = format!("{}\n\n{report}", retry_prompt(score));
    for w in &warnings {
        prompt.push('\n');
        prompt.push_str(w);
    }
    if runner.trace.budget_final.is_exhausted(&ep.limits) {
        runner.final_guess(ws, prompt);
    } else {
        runner.trace.conversation.push(ChatTurn::user(prompt));
        runner.run(ws);
    }
    let mut attempt = runner.trace;
    attempt.score_with(verifier, &ep.problem);
    let improved = attempt.score.unwrap_or(0.0) > score;
    let kept = if improved { attempt.clone() } else { trace.clone() };
    Ok(Retry { kept, attempt, improved })
}
