//! Constrained paragraph generation: sentence counts, per-sentence last
//! words, word-count bounds, and required or banned words. All-or-nothing.
//!
//! Sentences end at `.`, `!` or `?` followed by whitespace or end of text.
//! Abbreviations such as "Dr." are not special-cased.

use serde::{Deserialize, Serialize};

use super::{answer_region, Problem, TaskKind, VerifierReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    SentenceCount { n: usize },
    LastWords { words: Vec<String> },
    WordCount {
        #[serde(default)]
        min: Option<usize>,
        #[serde(default)]
        max: Option<usize>,
    },
    Include { words: Vec<String> },
    Exclude { words: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColliePayload {
    pub constraints: Vec<Constraint>,
}

pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        // swallow runs like "?!" or "..."
        let mut end = i + c.len_utf8();
        while let Some(&(j, d)) = iter.peek() {
            if matches!(d, '.' | '!' | '?') {
                end = j + d.len_utf8();
                iter.next();
            } else {
                break;
            }
        }
        let at_boundary = match iter.peek() {
            None => true,
            Some(&(_, d)) => d.is_whitespace(),
        };
        if at_boundary {
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn clean_word(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(clean_word)
        .filter(|w| !w.is_empty())
        .collect()
}

fn last_word(sentence: &str) -> String {
    sentence
        .split_whitespace()
        .rev()
        .map(clean_word)
        .find(|w| !w.is_empty())
        .unwrap_or_default()
}

pub fn check(text: &str, constraints: &[Constraint]) -> VerifierReport {
    let text = text.trim();
    if text.is_empty() {
        return VerifierReport::fail("empty answer");
    }
    let sentences = split_sentences(text);
    let all_words = words(text);
    for c in constraints {
        match c {
            Constraint::SentenceCount { n } => {
                if sentences.len() != *n {
                    return VerifierReport::fail(format!(
                        "Paragraph has {} sentences instead of {n}",
                        sentences.len()
                    ));
                }
            }
            Constraint::LastWords { words: required } => {
                if sentences.len() != required.len() {
                    return VerifierReport::fail(format!(
                        "Paragraph has {} sentences instead of {}",
                        sentences.len(),
                        required.len()
                    ));
                }
                for (i, (s, want)) in sentences.iter().zip(required).enumerate() {
                    let got = last_word(s);
                    if got != want.to_lowercase() {
                        return VerifierReport::fail(format!(
                            "Sentence {} ends with '{got}' instead of '{want}'",
                            i + 1
                        ));
                    }
                }
            }
            Constraint::WordCount { min, max } => {
                let n = all_words.len();
                if min.is_some_and(|m| n < m) || max.is_some_and(|m| n > m) {
                    return VerifierReport::fail(format!(
                        "Paragraph has {n} words, outside [{}, {}]",
                        min.map_or("-".into(), |m| m.to_string()),
                        max.map_or("-".into(), |m| m.to_string())
                    ));
                }
            }
            Constraint::Include { words: req } => {
                if let Some(w) = req.iter().find(|w| !all_words.contains(&w.to_lowercase())) {
                    return VerifierReport::fail(format!("Missing required word '{w}'"));
                }
            }
            Constraint::Exclude { words: banned } => {
                if let Some(w) = banned.iter().find(|w| all_words.contains(&w.to_lowercase())) {
                    return VerifierReport::fail(format!("Contains banned word '{w}'"));
                }
            }
        }
    }
    VerifierReport::pass("All requirements met")
}

pub fn verify(problem: &Problem, answer: &str) -> VerifierReport {
    match serde_json::from_value::<ColliePayload>(problem.payload.clone()) {
        Ok(p) => check(answer_region(answer), &p.constraints),
        Err(e) => VerifierReport::fail(format!("bad collie payload: {e}")),
    }
}

/// Prompt in the style of the last-word paragraph problems.
pub fn prompt(constraints: &[Constraint]) -> String {
    let mut items = Vec::new();
    for c in constraints {
        items.push(match c {
            Constraint::SentenceCount { n } => format!("with exactly {n} sentences"),
            Constraint::LastWords { words } => format!(
                "with sentences having the last word to be {}, respectively",
                words.iter().map(|w| format!("'{w}'")).collect::<Vec<_>>().join(", ")
            ),
            Constraint::WordCount { min, max } => match (min, max) {
                (Some(a), Some(b)) => format!("with between {a} and {b} words"),
                (Some(a), None) => format!("with at least {a} words"),
                (None, Some(b)) => format!("with at most {b} words"),
                (None, None) => "with any number of words".into(),
            },
            Constraint::Include { words } => format!("using the words {}", quoted(words)),
            Constraint::Exclude { words } => format!("not using the words {}", quoted(words)),
        });
    }
    let mut out = String::from("Please generate a paragraph:\n");
    for (i, item) in items.iter().enumerate() {
        let end = if i + 1 == items.len() { "." } else { ";" };
        out.push_str(&format!("{}) {item}{end}\n", i + 1));
    }
    out.push_str(
        "\nThe paragraph should be a coherent paragraph. Wrap your final answer between <answer> \
         and </answer> tags. Your answer can contain multiple lines if necessary to meet the \
         instructions. No other tags should be used in your answer.",
    );
    out
}

fn quoted(words: &[String]) -> String {
    words.iter().map(|w| format!("'{w}'")).collect::<Vec<_>>().join(", ")
}

pub fn problem(id: impl Into<String>, constraints: Vec<Constraint>) -> Problem {
    Problem {
        id: id.into(),
        prompt: prompt(&constraints),
        payload: serde_json::to_value(ColliePayload { constraints }).unwrap(),
        task: TaskKind::Collie,
    }
}
