//! Run reports, regeneration from persisted traces, and paired comparison.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{HarnessError, RunMeta};
use crate::orchestrator::{Outcome, Trace};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemResult {
    pub id: String,
    pub score: f64,
    pub outcome: Outcome,
    pub tokens: u64,
    pub time: f64,
    pub turns: u32,
    #[serde(default)]
    pub tokens_estimated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub total: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let total: f64 = values.iter().sum();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Self { mean: total / n as f64, median, min: v[0], max: v[n - 1], total }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub meta: RunMeta,
    pub n: usize,
    pub mean_score: f64,
    /// Standard error of the mean score (sample standard deviation / sqrt n).
    pub sem: f64,
    pub aborted: usize,
    pub tokens: Distribution,
    pub time: Distribution,
    pub turns: Distribution,
    /// Sorted by problem id.
    pub problems: Vec<ProblemResult>,
}

pub fn mean_and_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// One row per problem id; a later trace for the same problem replaces an
/// earlier one.
pub fn build_report(meta: RunMeta, traces: &[Trace]) -> RunReport {
    let mut latest: BTreeMap<&str, &Trace> = BTreeMap::new();
    for t in traces {
        latest.insert(&t.problem_id, t);
    }
    let problems: Vec<ProblemResult> = latest
        .values()
        .map(|t| ProblemResult {
            id: t.problem_id.clone(),
            score: t.score.unwrap_or(0.0),
            outcome: t.outcome,
            tokens: t.budget_final.tokens_used,
            time: t.budget_final.time_used,
            turns: t.budget_final.turns_used,
            tokens_estimated: t.tokens_estimated(),
        })
        .collect();
    let scores: Vec<f64> = problems.iter().map(|p| p.score).collect();
    let (mean_score, sem) = mean_and_sem(&scores);
    let col = |f: fn(&ProblemResult) -> f64| Distribution::of(&problems.iter().map(f).collect::<Vec<_>>());
    RunReport {
        schema: REPORT_SCHEMA,
        meta,
        n: problems.len(),
        mean_score,
        sem,
        aborted: problems.iter().filter(|p| p.outcome == Outcome::Aborted).count(),
        tokens: col(|p| p.tokens as f64),
        time: col(|p| p.time),
        turns: col(|p| f64::from(p.turns)),
        problems,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p: f64,
}

/// Paired t-test on `a - b`. All-zero differences give t = 0, p = 1; a
/// constant non-zero difference gives an infinite t and p = 0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<TTest> {
    let n = a.len();
    if n != b.len() || n < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, se) = mean_and_sem(&d);
    let df = n - 1;
    if se == 0.0 {
        return Some(if mean == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest { t: mean.signum() * f64::INFINITY, df, p: 0.0 }
        });
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, df as f64).ok()?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Some(TTest { t, df, p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n: usize,
    pub method_a: String,
    pub method_b: String,
    pub mean_score_a: f64,
    pub mean_score_b: f64,
    pub score_delta: f64,
    pub mean_tokens_a: f64,
    pub mean_tokens_b: f64,
    /// 100 x (B - A) / B.
    pub token_savings_pct: f64,
    pub mean_time_a: f64,
    pub mean_time_b: f64,
    pub time_savings_pct: f64,
    pub ttest: Option<TTest>,
    pub alpha: f64,
    pub significant: bool,
}

pub fn savings_pct(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        100.0 * (b - a) / b
    }
}

/// Compares run A against baseline B over the same problem ids.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<Comparison, HarnessError> {
    let ids_a: BTreeSet<&str> = a.problems.iter().map(|p| p.id.as_str()).collect();
    let ids_b: BTreeSet<&str> = b.problems.iter().map(|p| p.id.as_str()).collect();
    if ids_a != ids_b {
        let only_a: Vec<_> = ids_a.difference(&ids_b).take(5).collect();
        let only_b: Vec<_> = ids_b.difference(&ids_a).take(5).collect();
        return Err(HarnessError::IdMismatch(format!("only in A: {only_a:?}; only in B: {only_b:?}")));
    }
    // both are sorted by id, so rows pair up
    let sa: Vec<f64> = a.problems.iter().map(|p| p.score).collect();
    let sb: Vec<f64> = b.problems.iter().map(|p| p.score).collect();
    let ttest = paired_t_test(&sa, &sb);
    let alpha = 0.05;
    Ok(Comparison {
        n: a.n,
        method_a: a.meta.method.label().into(),
        method_b: b.meta.method.label().into(),
        mean_score_a: a.mean_score,
        mean_score_b: b.mean_score,
        score_delta: a.mean_score - b.mean_score,
        mean_tokens_a: a.tokens.mean,
        mean_tokens_b: b.tokens.mean,
        token_savings_pct: savings_pct(a.tokens.mean, b.tokens.mean),
        mean_time_a: a.time.mean,
        mean_time_b: b.time.mean,
        time_savings_pct: savings_pct(a.time.mean, b.time.mean),
        ttest,
        alpha,
        significant: ttest.is_some_and(|t| t.p < alpha),
    })
}
