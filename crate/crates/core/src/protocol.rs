//! Text-tag grammar between the language model and the code workspace.
//!
//! An assistant message carries zero or more code cells and at most one
//! return directive:
//!
//! ```text
//! <turn>
//! prose ...
//! <code name="cell_name">
//! ```python
//! print("hello")
//! ```
//! </code>
//! <return>answer text</return>        or        <return var="answer">
//! </turn>
//! ```
//!
//! Feedback from the workspace uses `<output cell="NAME">` and
//! `<error cell="NAME">` blocks followed by a budget report. The model-facing
//! system prompt says `<output name=...>`, but every recorded transcript uses
//! `cell=`, so `cell=` is what gets rendered.

use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Sentence emitted for a successful cell that printed nothing.
pub const NO_OUTPUT_TEMPLATE: &str = "Cell {cell_name} has been executed but returned no output";

/// Marker placed in the output block of a cell killed for exceeding a resource limit.
pub const INTERRUPTED_MARKER: &str = "[Execution interrupted due to resource limits]";

const NUDGE: &str = "Your message did not include a code block or return statement.\n\n\
Please continue problem solving, and remember to only respond with messages that contain code \
blocks or return statements. It might be that you made minor formatting mistakes. If you are \
unsure about the format, please refer to the examples.";

/// A named code cell extracted from an assistant message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeCell {
    pub name: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnKind {
    InlineText,
    VariableRef,
}

/// `<return>text</return>` or `<return var="name">`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnDirective {
    pub kind: ReturnKind,
    pub payload: String,
}

impl ReturnDirective {
    pub fn inline(text: impl Into<String>) -> Self {
        Self {
            kind: ReturnKind::InlineText,
            payload: text.into(),
        }
    }

    pub fn variable(name: impl Into<String>) -> Self {
        Self {
            kind: ReturnKind::VariableRef,
            payload: name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub raw: String,
    pub cells: Vec<CodeCell>,
    pub return_directive: Option<ReturnDirective>,
}

/// Non-fatal problems found while parsing. Malformed cells are skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseIssue {
    MalformedCell {
        name: Option<String>,
        offset: usize,
        reason: String,
    },
    /// A second return directive; only the first one is kept.
    DuplicateReturn { offset: usize },
}

impl ParseIssue {
    /// One-line description suitable for model-facing feedback.
    pub fn describe(&self) -> String {
        match self {
            ParseIssue::MalformedCell { name, reason, .. } => match name {
                Some(n) => format!("Cell {n} was not executed: {reason}."),
                None => format!("A code cell was not executed: {reason}."),
            },
            ParseIssue::DuplicateReturn { .. } => {
                "Your message contained more than one return statement; only one is allowed."
                    .to_string()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    Message {
        message: AgentMessage,
        issues: Vec<ParseIssue>,
    },
    /// Neither a cell nor a return directive could be recovered.
    NudgeRequired { issues: Vec<ParseIssue> },
}

impl ParseOutcome {
    pub fn message(&self) -> Option<&AgentMessage> {
        match self {
            ParseOutcome::Message { message, .. } => Some(message),
            ParseOutcome::NudgeRequired { .. } => None,
        }
    }

    pub fn issues(&self) -> &[ParseIssue] {
        match self {
            ParseOutcome::Message { issues, .. } | ParseOutcome::NudgeRequired { issues } => {
                issues
            }
        }
    }

    pub fn is_nudge(&self) -> bool {
        matches!(self, ParseOutcome::NudgeRequired { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Error,
    Interrupted,
}

/// Outcome of executing one cell, as shown to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell_name: String,
    pub status: CellStatus,
    pub output: String,
    pub error_trace: Option<String>,
    /// Wall time in seconds.
    pub duration: f64,
}

impl CellResult {
    pub fn ok(name: impl Into<String>, output: impl Into<String>, duration: f64) -> Self {
        Self {
            cell_name: name.into(),
            status: CellStatus::Ok,
            output: output.into(),
            error_trace: None,
            duration,
        }
    }

    pub fn error(
        name: impl Into<String>,
        output: impl Into<String>,
        trace: impl Into<String>,
        duration: f64,
    ) -> Self {
        Self {
            cell_name: name.into(),
            status: CellStatus::Error,
            output: output.into(),
            error_trace: Some(trace.into()),
            duration,
        }
    }

    pub fn interrupted(
        name: impl Into<String>,
        output: impl Into<String>,
        reason: impl Into<String>,
        duration: f64,
    ) -> Self {
        Self {
            cell_name: name.into(),
            status: CellStatus::Interrupted,
            output: output.into(),
            error_trace: Some(reason.into()),
            duration,
        }
    }
}

fn code_open_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"<code\s+name\s*=\s*"([^"\n]*)"\s*>"#).unwrap())
}

fn return_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"<return\s+var\s*=\s*"([^"\n]*)"\s*/?>|<return>"#).unwrap()
    })
}

/// Valid cell label: non-empty, no whitespace, no quotes.
pub fn is_valid_cell_name(name: &str) -> bool {
    !name.is_empty()
        && !name
            .chars()
            .any(|c| c.is_whitespace() || c == '"' || c == '\'' || c == '<' || c == '>')
}

/// Python-style identifier.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

fn normalize_source(mut src: String) -> String {
    while src.ends_with('\n') || src.ends_with('\r') {
        src.pop();
    }
    if !src.is_empty() {
        src.push('\n');
    }
    src
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Pulls fenced blocks out of a `<code>` body. Several fences are joined with
/// a newline. An opening fence with no closing fence runs to the end of the body.
fn extract_fenced(body: &str) -> Option<String> {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in body.split_inclusive('\n') {
        let bare = line.trim_end_matches(['\n', '\r']);
        match current.as_mut() {
            None => {
                if is_fence(bare) {
                    current = Some(String::new());
                }
            }
            Some(buf) => {
                if is_fence(bare) {
                    blocks.push(current.take().unwrap());
                } else {
                    buf.push_str(bare);
                    buf.push('\n');
                }
            }
        }
    }
    if let Some(buf) = current {
        blocks.push(buf);
    }
    if blocks.is_empty() {
        return None;
    }
    let joined = blocks
        .into_iter()
        .map(|b| b.trim_end_matches('\n').to_string())
        .collect::<Vec<_>>()
        .join("\n");
    Some(normalize_source(joined))
}

/// Parses one assistant message. Never fails: the worst case is
/// [`ParseOutcome::NudgeRequired`].
///
/// Scans left to right; whichever tag opens first owns its span, so a
/// return tag inside a cell is code and a cell inside an inline return is
/// answer text.
pub fn parse_agent_message(raw: &str) -> ParseOutcome {
    let mut issues = Vec::new();
    let mut cells = Vec::new();
    let mut return_directive = None;
    let mut cursor = 0;
    // an unterminated cell stops cell matching; returns after it still count
    let mut cells_open = true;
    loop {
        let code = if cells_open { code_open_re().captures_at(raw, cursor) } else { None };
        let ret = return_re().captures_at(raw, cursor);
        let code_first = match (&code, &ret) {
            (Some(c), Some(r)) => c.get(0).unwrap().start() < r.get(0).unwrap().start(),
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        if code_first {
            let caps = code.unwrap();
            let whole = caps.get(0).unwrap();
            let name = caps.get(1).unwrap().as_str().to_string();
            let body_start = whole.end();
            let Some(close_rel) = raw[body_start..].find("</code>") else {
                issues.push(ParseIssue::MalformedCell {
                    name: Some(name),
                    offset: whole.start(),
                    reason: "missing closing </code> tag".into(),
                });
                cells_open = false;
                cursor = body_start;
                continue;
            };
            let body_end = body_start + close_rel;
            cursor = body_end + "</code>".len();
            if !is_valid_cell_name(&name) {
                issues.push(ParseIssue::MalformedCell {
                    name: Some(name),
                    offset: whole.start(),
                    reason: "invalid cell name".into(),
                });
                continue;
            }
            match extract_fenced(&raw[body_start..body_end]) {
                Some(source) => cells.push(CodeCell { name, source }),
                None => issues.push(ParseIssue::MalformedCell {
                    name: Some(name),
                    offset: whole.start(),
                    reason: "no fenced code block inside <code> tags".into(),
                }),
            }
            continue;
        }
        let caps = ret.unwrap();
        let whole = caps.get(0).unwrap();
        cursor = whole.end();
        let directive = if let Some(var) = caps.get(1) {
            let var = var.as_str().trim();
            if !is_identifier(var) {
                continue;
            }
            ReturnDirective::variable(var)
        } else {
            let Some(close_rel) = raw[whole.end()..].find("</return>") else {
                continue;
            };
            let payload = &raw[whole.end()..whole.end() + close_rel];
            cursor = whole.end() + close_rel + "</return>".len();
            ReturnDirective::inline(payload)
        };
        if return_directive.is_none() {
            return_directive = Some(directive);
        } else {
            issues.push(ParseIssue::DuplicateReturn { offset: whole.start() });
        }
    }

    if cells.is_empty() && return_directive.is_none() {
        return ParseOutcome::NudgeRequired { issues };
    }
    ParseOutcome::Message {
        message: AgentMessage {
            raw: raw.to_string(),
            cells,
            return_directive,
        },
        issues,
    }
}

/// Renders cells and return directive back into the tag grammar.
/// `parse_agent_message(&render_agent_message(m))` recovers `m` up to `raw`.
pub fn render_agent_message(cells: &[CodeCell], ret: Option<&ReturnDirective>) -> String {
    let mut out = String::from("<turn>\n");
    for cell in cells {
        let _ = write!(
            out,
            "<code name=\"{}\">\n```python\n{}```\n</code>\n\n",
            cell.name, cell.source
        );
    }
    match ret {
        Some(ReturnDirective {
            kind: ReturnKind::InlineText,
            payload,
        }) => {
            let _ = writeln!(out, "<return>{payload}</return>");
        }
        Some(ReturnDirective {
            kind: ReturnKind::VariableRef,
            payload,
        }) => {
            let _ = writeln!(out, "<return var=\"{payload}\">");
        }
        None => {}
    }
    out.push_str("</turn>");
    out
}

fn push_block(out: &mut String, tag: &str, cell: &str, body: &str) {
    if !out.is_empty() {
        out.push_str("\n\n");
    }
    let _ = write!(out, "<{tag} cell=\"{cell}\">\n{body}");
    if !body.ends_with('\n') {
        out.push('\n');
    }
    let _ = write!(out, "</{tag}>");
}

/// Feedback for one assistant message: result blocks, a blank line, the
/// budget report, then one line per warning.
pub fn render_feedback(results: &[CellResult], budget_report: &str, warnings: &[String]) -> String {
    let mut out = String::new();
    for r in results {
        match r.status {
            CellStatus::Ok => {
                if r.output.trim().is_empty() {
                    if !out.is_empty() {
                        out.push_str("\n\n");
                    }
                    out.push_str(&NO_OUTPUT_TEMPLATE.replace("{cell_name}", &r.cell_name));
                } else {
                    push_block(&mut out, "output", &r.cell_name, &r.output);
                }
            }
            CellStatus::Error => {
                if !r.output.trim().is_empty() {
                    push_block(&mut out, "output", &r.cell_name, &r.output);
                }
                push_block(
                    &mut out,
                    "error",
                    &r.cell_name,
                    r.error_trace.as_deref().unwrap_or(""),
                );
            }
            CellStatus::Interrupted => {
                let mut body = r.output.clone();
                if !body.is_empty() && !body.ends_with('\n') {
                    body.push('\n');
                }
                body.push('\n');
                body.push_str(INTERRUPTED_MARKER);
                push_block(&mut out, "output", &r.cell_name, &body);
                if let Some(trace) = &r.error_trace {
                    push_block(&mut out, "error", &r.cell_name, trace);
                }
            }
        }
    }
    if !out.is_empty() {
        out.push_str("\n\n");
    }
    out.push_str(budget_report);
    for w in warnings {
        out.push('\n');
        out.push_str(w);
    }
    out
}

/// The fixed corrective message for a turn with no cell and no return.
pub fn render_nudge() -> &'static str {
    NUDGE
}

/// Nudge followed by the budget report and warnings, as one user turn.
pub fn render_nudge_turn(budget_report: &str, warnings: &[String]) -> String {
    let mut out = format!("{NUDGE}\n\n{budget_report}");
    for w in warnings {
        out.push('\n');
        out.push_str(w);
    }
    out
}

/// Keeps the first `cap` lines and appends the truncation marker when longer.
pub fn truncate_output(output: &str, cap: usize) -> String {
    let lines: Vec<&str> = output.split_inclusive('\n').collect();
    if lines.len() <= cap {
        return output.to_string();
    }
    let mut out: String = lines[..cap].concat();
    let _ = write!(out, "\n [output truncated after {cap} lines..]");
    out
}

/// Keeps the last `cap` lines of an error trace.
pub fn tail_lines(trace: &str, cap: usize) -> String {
    let lines: Vec<&str> = trace.split_inclusive('\n').collect();
    if lines.len() <= cap {
        return trace.to_string();
    }
    lines[lines.len() - cap..].concat()
}
