//! Misspelling correction, scored by exact match after whitespace
//! normalization.

use serde::{Deserialize, Serialize};

use super::{answer_region, Problem, TaskKind, VerifierReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TyposPayload {
    pub reference: String,
}

pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn check(answer: &str, reference: &str) -> VerifierReport {
    let got = normalize(answer);
    let want = normalize(reference);
    if got == want {
        return VerifierReport::pass("exact match");
    }
    let mismatch = got
        .split(' ')
        .zip(want.split(' '))
        .enumerate()
        .find(|(_, (a, b))| a != b);
    match mismatch {
        Some((i, (a, b))) => {
            VerifierReport::fail(format!("word {} is '{a}', expected '{b}'", i + 1))
        }
        None => VerifierReport::fail(format!(
            "length differs: {} words, expected {}",
            got.split(' ').filter(|w| !w.is_empty()).count(),
            want.split(' ').count()
        )),
    }
}

pub fn verify(problem: &Problem, answer: &str) -> VerifierReport {
    match serde_json::from_value::<TyposPayload>(problem.payload.clone()) {
        Ok(p) => check(answer_region(answer), &p.reference),
        Err(e) => VerifierReport::fail(format!("bad typos payload: {e}")),
    }
}

pub fn prompt(text_with_typos: &str) -> String {
    format!(
        "Please output this exact text below, with no changes at all except for **fixing the \
         misspellings**. Please leave all other stylistic decisions like commas and US vs British \
         spellings as in the original text. Wrap your final answer between <answer> and </answer> \
         tags.\n\n{text_with_typos}"
    )
}

pub fn problem(id: impl Into<String>, text_with_typos: &str, reference: impl Into<String>) -> Problem {
    Problem {
        id: id.into(),
        prompt: prompt(text_with_typos),
        payload: serde_json::to_value(TyposPayload { reference: reference.into() }).unwrap(),
        task: TaskKind::Typos,
    }
}
