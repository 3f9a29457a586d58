//! Structured answer extraction for externally graded datasets, and a
//! generic exact-match verifier on top of it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Problem, VerifierReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    /// `<answer>...</answer>`, last pair.
    AnswerTags,
    /// Text after the last `Answer:` up to the end of that line.
    AnswerColonLine,
    /// `<solution>a, b, c</solution>`, last pair, comma separated.
    SolutionList,
    /// An integer in `0..=999`, from answer tags, an `Answer:` line, or the
    /// whole text.
    Integer0to999,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extracted {
    Text(String),
    List(Vec<String>),
    Integer(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no answer in the expected format")]
    NotFound,
    #[error("{0} is outside 0..=999")]
    OutOfRange(i64),
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let end = text.rfind(close)?;
    let start = text[..end].rfind(open)?;
    Some(&text[start + open.len()..end])
}

fn after_answer_colon(text: &str) -> Option<&str> {
    let at = text.rfind("Answer:")?;
    let rest = &text[at + "Answer:".len()..];
    Some(rest.lines().next().unwrap_or(""))
}

fn parse_integer(s: &str) -> Option<i64> {
    // the last \boxed{...} wins wherever it sits
    let s = match s.rfind("\\boxed{") {
        Some(at) => {
            let inner = &s[at + "\\boxed{".len()..];
            &inner[..inner.find('}')?]
        }
        None => s.trim(),
    };
    let s = s.trim().trim_end_matches('.').trim();
    let s = s.strip_prefix('$').and_then(|x| x.strip_suffix('$')).unwrap_or(s);
    s.trim().parse::<i64>().ok()
}

pub fn extract_structured_answer(answer: &str, format: AnswerFormat) -> Result<Extracted, ExtractError> {
    let nonempty = |s: &str| {
        let t = s.trim();
        (!t.is_empty()).then(|| t.to_string())
    };
    match format {
        AnswerFormat::AnswerTags => between(answer, "<answer>", "</answer>")
            .and_then(nonempty)
            .map(Extracted::Text)
            .ok_or(ExtractError::NotFound),
        AnswerFormat::AnswerColonLine => after_answer_colon(answer)
            .and_then(nonempty)
            .map(Extracted::Text)
            .ok_or(ExtractError::NotFound),
        AnswerFormat::SolutionList => {
            let body = between(answer, "<solution>", "</solution>").ok_or(ExtractError::NotFound)?;
            let items: Vec<String> = body.split(',').map(|x| x.trim().to_string()).collect();
            if items.iter().all(String::is_empty) {
                return Err(ExtractError::NotFound);
            }
            Ok(Extracted::List(items))
        }
        AnswerFormat::Integer0to999 => {
            let region = between(answer, "<answer>", "</answer>")
                .or_else(|| after_answer_colon(answer))
                .unwrap_or(answer);
            let n = parse_integer(region).ok_or(ExtractError::NotFound)?;
            if (0..=999).contains(&n) {
                Ok(Extracted::Integer(n))
            } else {
                Err(ExtractError::OutOfRange(n))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedPayload {
    pub format: AnswerFormat,
    pub expected: Extracted,
}

fn fold(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Exact match after extraction; text comparisons fold case and whitespace.
pub fn matches(got: &Extracted, want: &Extracted) -> bool {
    match (got, want) {
        (Extracted::Text(a), Extracted::Text(b)) => fold(a) == fold(b),
        (Extracted::List(a), Extracted::List(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| fold(x) == fold(y))
        }
        (Extracted::Integer(a), Extracted::Integer(b)) => a == b,
        _ => false,
    }
}

pub fn verify(problem: &Problem, answer: &str) -> VerifierReport {
    let payload: ExtractedPayload = match serde_json::from_value(problem.payload.clone()) {
        Ok(p) => p,
        Err(e) => return VerifierReport::fail(format!("bad extracted payload: {e}")),
    };
    match extract_structured_answer(answer, payload.format) {
        Err(e) => VerifierReport::fail(e.to_string()),
        Ok(got) if matches(&got, &payload.expected) => VerifierReport::pass("exact match"),
        Ok(got) => VerifierReport::fail(format!("extracted {got:?}, expected {:?}", payload.expected)),
    }
}
