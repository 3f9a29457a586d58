//! Divergent-association scoring: given seed words, produce 7 words as far
//! apart as possible. Scored over the first 5 valid words as 100 x the mean
//! cosine distance across pick-pick and pick-seed pairs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{answer_region, Problem, TaskError, TaskKind, VerifierReport};

pub const MAX_CANDIDATES: usize = 7;
pub const PICKS: usize = 5;

/// Read-only word vectors. Lookup is case-folded.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: HashMap::new() }
    }

    /// Panics when the dimension disagrees; meant for building tables in code.
    pub fn insert(&mut self, word: &str, v: Vec<f64>) {
        assert_eq!(v.len(), self.dim, "vector for {word} has wrong dimension");
        self.vectors.insert(word.to_lowercase(), v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// GloVe text format: `word v1 ... vd` per line. The first line fixes `d`.
    /// When a word repeats, the first occurrence wins.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaskError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| TaskError::Io { path: display.clone(), source })?;
        let mut table = Self::new(0);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| TaskError::Io { path: display.clone(), source })?;
            let bad = |msg: String| TaskError::Embedding { path: display.clone(), line: i + 1, msg };
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v = parts
                .map(|x| x.parse::<f64>().map_err(|e| bad(format!("bad component '{x}': {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if table.dim == 0 {
                if v.is_empty() {
                    return Err(bad("no vector components".into()));
                }
                table.dim = v.len();
            } else if v.len() != table.dim {
                return Err(bad(format!("dimension {} differs from {}", v.len(), table.dim)));
            }
            table.vectors.entry(word.to_lowercase()).or_insert(v);
        }
        Ok(table)
    }
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreativityPayload {
    pub seeds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatResult {
    /// 0..=100
    pub score: f64,
    pub picks: Vec<String>,
    pub rejected: Vec<(String, &'static str)>,
}

/// Candidate words in order of appearance, at most 7. Digits and punctuation
/// separate words, so numbered or comma-separated lists both work.
pub fn candidate_words(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_alphabetic() || c == '-' || c == '\''))
        .filter(|w| !w.is_empty())
        .take(MAX_CANDIDATES)
        .collect()
}

fn usable(table: &EmbeddingTable, word: &str) -> bool {
    table.get(word).is_some_and(|v| v.iter().any(|x| *x != 0.0))
}

pub fn dat_score(seeds: &[String], answer: &str, table: &EmbeddingTable) -> Result<DatResult, String> {
    if let Some(s) = seeds.iter().find(|s| !usable(table, s)) {
        return Err(format!("seed word '{s}' not in vocabulary"));
    }
    let folded_seeds: Vec<String> = seeds.iter().map(|s| s.to_lowercase()).collect();
    let mut picks: Vec<String> = Vec::new();
    let mut rejected = Vec::new();
    for w in candidate_words(answer_region(answer)) {
        let lw = w.to_lowercase();
        let why = if !lw.chars().all(char::is_alphabetic) {
            Some("not alphabetic")
        } else if !usable(table, &lw) {
            Some("not in vocabulary")
        } else if folded_seeds.contains(&lw) {
            Some("repeats a seed")
        } else if picks.contains(&lw) {
            Some("duplicate")
        } else {
            None
        };
        match why {
            Some(r) => rejected.push((w.to_string(), r)),
            None if picks.len() < PICKS => picks.push(lw),
            None => {}
        }
    }
    if picks.len() < PICKS {
        return Ok(DatResult { score: 0.0, picks, rejected });
    }
    let vec = |w: &str| table.get(w).unwrap();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..picks.len() {
        for j in i + 1..picks.len() {
            total += cosine_distance(vec(&picks[i]), vec(&picks[j]));
            pairs += 1;
        }
        for s in &folded_seeds {
            total += cosine_distance(vec(&picks[i]), vec(s));
            pairs += 1;
        }
    }
    Ok(DatResult { score: 100.0 * total / pairs as f64, picks, rejected })
}

pub fn verify(problem: &Problem, answer: &str, table: &EmbeddingTable) -> VerifierReport {
    let payload: CreativityPayload = match serde_json::from_value(problem.payload.clone()) {
        Ok(p) => p,
        Err(e) => return VerifierReport::fail(format!("bad creativity payload: {e}")),
    };
    match dat_score(&payload.seeds, answer, table) {
        Err(e) => VerifierReport::fail(e),
        Ok(r) if r.picks.len() < PICKS => {
            VerifierReport::fail(format!("only {} valid words, need {PICKS}", r.picks.len()))
        }
        Ok(r) => VerifierReport {
            score: (r.score / 100.0).clamp(0.0, 1.0),
            reason: format!("DAT {:.2} over {}", r.score, r.picks.join(", ")),
        },
    }
}

pub fn prompt(seeds: &[String]) -> String {
    format!(
        "You are given 3 seed words: {}. Come up with 7 additional single English words that are \
         as different from each other, and from the seed words, as possible in meaning and usage. \
         Use only single words (no proper nouns, no technical jargon, no repeated or seed words). \
         Your score is the average pairwise cosine distance between the words in a word embedding \
         space, computed over the first 5 valid words. Wrap your final answer between <answer> and \
         </answer> tags as a comma-separated list of 7 words.",
        seeds.join(", ")
    )
}

pub fn problem(id: impl Into<String>, seeds: Vec<String>) -> Problem {
    Problem {
        id: id.into(),
        prompt: prompt(&seeds),
        payload: serde_json::to_value(CreativityPayload { seeds }).unwrap(),
        task: TaskKind::Creativity,
    }
}
