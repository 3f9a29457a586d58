//! Few-shot example selection from self-generated traces.
//!
//! GFL: per training problem, M attempts (one in-context retry when
//! imperfect), keep the top M/2, score each by how well it transfers as a
//! 1-shot example to the other N-1 problems, then keep the best per problem
//! and the top K overall. BFL skips the transfer step and samples among the
//! best-scoring attempts.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::BudgetLimits;
use crate::llm::{LanguageModel, Role};
use crate::orchestrator::{retry_in_context, solve, Episode, Mode, Outcome, Trace};
use crate::tasks::{Problem, Verifier};
use crate::workspace::WorkspaceFactory;

pub const TRACE_SEPARATOR: &str = "----------------";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub keep_per_problem: usize,
    /// Seeds BFL sampling.
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self { n: 5, m: 6, k: 2, keep_per_problem: 3, seed: 0 }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 || self.m == 0 || self.k == 0 || self.keep_per_problem == 0 {
            return Err("n, m, k and keep_per_problem must be positive".into());
        }
        if self.k > self.n {
            return Err(format!("k ({}) exceeds n ({})", self.k, self.n));
        }
        if self.keep_per_problem > self.m {
            return Err(format!("keep_per_problem ({}) exceeds m ({})", self.keep_per_problem, self.m));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub source_problem: String,
    /// Attempt index within the source problem, 0-based.
    pub attempt: usize,
    pub trace: Trace,
    pub score: f64,
    #[serde(default)]
    pub gen_score: Option<f64>,
    #[serde(default)]
    pub cross_scores: Vec<f64>,
}

impl Candidate {
    fn turns(&self) -> u32 {
        self.trace.budget_final.turns_used
    }

    fn tokens(&self) -> u64 {
        self.trace.budget_final.tokens_used
    }
}

/// Score descending, then fewer turns, fewer tokens, earlier attempt.
pub fn by_score(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.turns().cmp(&b.turns()))
        .then(a.tokens().cmp(&b.tokens()))
        .then(a.attempt.cmp(&b.attempt))
}

/// As [`by_score`] with the generalization score as the primary key.
pub fn by_gen_score(a: &Candidate, b: &Candidate) -> Ordering {
    let g = |c: &Candidate| c.gen_score.unwrap_or(f64::NEG_INFINITY);
    g(b).total_cmp(&g(a))
        .then(a.turns().cmp(&b.turns()))
        .then(a.tokens().cmp(&b.tokens()))
        .then(a.attempt.cmp(&b.attempt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub problem_id: String,
    pub attempt: usize,
    pub score: f64,
    #[serde(default)]
    pub gen_score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub method: String,
    pub examples: Vec<String>,
    pub provenance: Vec<Provenance>,
}

impl ExampleSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    fn from_picks(method: &str, picks: &[(&Problem, &Candidate)]) -> Self {
        Self {
            method: method.into(),
            examples: picks.iter().map(|(p, c)| render_example(p, &c.trace)).collect(),
            provenance: picks
                .iter()
                .map(|(_, c)| Provenance {
                    problem_id: c.source_problem.clone(),
                    attempt: c.attempt,
                    score: c.score,
                    gen_score: c.gen_score,
                })
                .collect(),
        }
    }
}

/// Transcript of a solved problem, for use as an in-context example. The
/// system prompt and the initial user turn are dropped; everything after is
/// kept verbatim, feedback and budget reports included.
pub fn render_example(problem: &Problem, trace: &Trace) -> String {
    let mut out = format!("# EXAMPLE PROBLEM\n{}\n\n# EXAMPLE SOLUTION TRACE\n", problem.prompt);
    let first_assistant = trace
        .conversation
        .iter()
        .position(|t| t.role == Role::Assistant)
        .unwrap_or(trace.conversation.len());
    for turn in &trace.conversation[first_assistant..] {
        let who = match turn.role {
            Role::Assistant => "ASSISTANT",
            _ => "USER",
        };
        out.push_str(&format!("\n{TRACE_SEPARATOR}\n{who}:\n\n{}\n", turn.content));
    }
    out.truncate(out.trim_end().len());
    out
}

/// Everything the learning loop needs to run episodes.
#[derive(Clone, Copy)]
pub struct LearnContext<'a> {
    pub lm: &'a dyn LanguageModel,
    pub factory: &'a dyn WorkspaceFactory,
    pub verifier: &'a dyn Verifier,
    pub limits: &'a BudgetLimits,
    pub mode: Mode,
}

/// Counts `solve` calls and retries.
#[derive(Debug, Default)]
pub struct EpisodeCounter {
    episodes: AtomicUsize,
    retries: AtomicUsize,
}

impl EpisodeCounter {
    pub fn episodes(&self) -> usize {
        self.episodes.load(AtomicOrdering::Relaxed)
    }

    pub fn retries(&self) -> usize {
        self.retries.load(AtomicOrdering::Relaxed)
    }
}

impl LearnContext<'_> {
    /// Solves and scores one episode; optionally one retry when imperfect.
    fn run(&self, ep: &Episode, retry: bool, counter: &EpisodeCounter) -> Trace {
        counter.episodes.fetch_add(1, AtomicOrdering::Relaxed);
        let mut ws = match self.factory.create(&ep.id) {
            Ok(ws) => ws,
            Err(e) => {
                tracing::warn!(episode = %ep.id, error = %e, "workspace creation failed");
                let mut t = Trace::failed(ep, e.to_string());
                t.score_with(self.verifier, &ep.problem);
                return t;
            }
        };
        let mut trace = solve(ep, self.lm, &mut ws);
        trace.score_with(self.verifier, &ep.problem);
        let imperfect = trace.score.unwrap_or(0.0) < self.verifier.max_score();
        if retry && imperfect && trace.outcome == Outcome::Answered {
            if let Ok(r) = retry_in_context(ep, &trace, self.lm, &mut ws, self.verifier) {
                counter.retries.fetch_add(1, AtomicOrdering::Relaxed);
                trace = r.kept;
            }
        }
        trace
    }
}

/// Step 1: `m` attempts per problem, each with at most one retry. Returned
/// in problem order, attempts in index order.
pub fn generate_candidates(
    problems: &[Problem],
    m: usize,
    ctx: &LearnContext<'_>,
    counter: &EpisodeCounter,
) -> Vec<Vec<Candidate>> {
    let jobs: Vec<(usize, usize)> = (0..problems.len()).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let traces: Vec<Trace> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let p = &problems[i];
            let ep = Episode::new(format!("train/{}/{j}", p.id), p.clone(), ctx.limits.clone())
                .with_mode(ctx.mode);
            ctx.run(&ep, true, counter)
        })
        .collect();
    let mut out: Vec<Vec<Candidate>> = problems.iter().map(|_| Vec::with_capacity(m)).collect();
    for ((i, j), trace) in jobs.into_iter().zip(traces) {
        out[i].push(Candidate {
            source_problem: problems[i].id.clone(),
            attempt: j,
            score: trace.score.unwrap_or(0.0),
            trace,
            gen_score: None,
            cross_scores: Vec::new(),
        });
    }
    out
}

/// Step 2 filter: the best `keep` candidates of one problem.
pub fn filter_top_by_score(candidates: &[Candidate], keep: usize) -> Vec<Candidate> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(by_score);
    sorted.truncate(keep);
    sorted
}

/// One 1-shot episode per other problem, no retries. Fills `cross_scores`
/// (in the order of `others`) and `gen_score`, the mean over the
/// candidate's own score and the cross scores.
pub fn generalization_eval(
    candidate: &mut Candidate,
    source: &Problem,
    others: &[Problem],
    ctx: &LearnContext<'_>,
    counter: &EpisodeCounter,
) {
    let example = vec![render_example(source, &candidate.trace)];
    let cross: Vec<f64> = others
        .par_iter()
        .map(|p| {
            let id = format!("gen/{}/{}/{}", candidate.source_problem, candidate.attempt, p.id);
            let ep = Episode::new(id, p.clone(), ctx.limits.clone())
                .with_examples(example.clone())
                .with_mode(ctx.mode);
            let t = ctx.run(&ep, false, counter);
            if t.outcome == Outcome::Aborted {
                tracing::warn!(episode = %ep.id, "cross-evaluation aborted, scored 0");
            }
            t.score.unwrap_or(0.0)
        })
        .collect();
    let total: f64 = candidate.score + cross.iter().sum::<f64>();
    candidate.gen_score = Some(total / (cross.len() + 1) as f64);
    candidate.cross_scores = cross;
}

/// Best per problem by gen score, then the top `k` across problems.
pub fn select_gfl(problems: &[Problem], candidates: &[Vec<Candidate>], k: usize) -> ExampleSet {
    let mut best: Vec<(&Problem, &Candidate)> = problems
        .iter()
        .zip(candidates)
        .filter_map(|(p, cs)| cs.iter().min_by(|a, b| by_gen_score(a, b)).map(|c| (p, c)))
        .collect();
    best.sort_by(|a, b| by_gen_score(a.1, b.1));
    if best.len() < k {
        tracing::warn!(have = best.len(), k, "fewer problems with candidates than requested examples");
    }
    best.truncate(k);
    ExampleSet::from_picks("gfl", &best)
}

/// Per-problem bests grouped into score tiers; whole tiers are taken while
/// they fit, and the tier that overflows `k` is sampled uniformly without
/// replacement.
pub fn select_bfl(problems: &[Problem], candidates: &[Vec<Candidate>], k: usize, seed: u64) -> ExampleSet {
    let mut best: Vec<(&Problem, &Candidate)> = problems
        .iter()
        .zip(candidates)
        .filter_map(|(p, cs)| cs.iter().min_by(|a, b| by_score(a, b)).map(|c| (p, c)))
        .collect();
    // stable: problem order within a tier
    best.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::with_capacity(k);
    let mut rest = best.as_slice();
    while picks.len() < k && !rest.is_empty() {
        let tier_len = rest.iter().take_while(|c| c.1.score == rest[0].1.score).count();
        let (tier, tail) = rest.split_at(tier_len);
        let want = k - picks.len();
        if tier.len() <= want {
            picks.extend_from_slice(tier);
        } else {
            for i in rand::seq::index::sample(&mut rng, tier.len(), want) {
                picks.push(tier[i]);
            }
        }
        rest = tail;
    }
    if picks.len() < k {
        tracing::warn!(have = picks.len(), k, "fewer problems with candidates than requested examples");
    }
    ExampleSet::from_picks("bfl", &picks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnOutcome {
    pub examples: ExampleSet,
    pub candidates: Vec<Vec<Candidate>>,
    pub episodes: usize,
    pub retries: usize,
}

fn check_problems(problems: &[Problem], cfg: &LearnConfig) -> Result<(), String> {
    cfg.validate()?;
    if problems.len() != cfg.n {
        return Err(format!("expected {} training problems, got {}", cfg.n, problems.len()));
    }
    Ok(())
}

pub fn learn_gfl(problems: &[Problem], cfg: &LearnConfig, ctx: &LearnContext<'_>) -> Result<LearnOutcome, String> {
    check_problems(problems, cfg)?;
    let counter = EpisodeCounter::default();
    let all = generate_candidates(problems, cfg.m, ctx, &counter);
    let mut kept: Vec<Vec<Candidate>> = all.iter().map(|cs| filter_top_by_score(cs, cfg.keep_per_problem)).collect();
    let jobs: Vec<(usize, usize)> =
        kept.iter().enumerate().flat_map(|(i, cs)| (0..cs.len()).map(move |j| (i, j))).collect();
    let evaluated: Vec<Candidate> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let mut c = kept[i][j].clone();
            let others: Vec<Problem> =
                problems.iter().enumerate().filter(|&(x, _)| x != i).map(|(_, p)| p.clone()).collect();
            generalization_eval(&mut c, &problems[i], &others, ctx, &counter);
            c
        })
        .collect();
    for ((i, j), c) in jobs.into_iter().zip(evaluated) {
        kept[i][j] = c;
    }
    Ok(LearnOutcome {
        examples: select_gfl(problems, &kept, cfg.k),
        candidates: kept,
        episodes: counter.episodes(),
        retries: counter.retries(),
    })
}

pub fn learn_bfl(problems: &[Problem], cfg: &LearnConfig, ctx: &LearnContext<'_>) -> Result<LearnOutcome, String> {
    check_problems(problems, cfg)?;
    let counter = EpisodeCounter::default();
    let all = generate_candidates(problems, cfg.m, ctx, &counter);
    Ok(LearnOutcome {
        examples: select_bfl(problems, &all, cfg.k, cfg.seed),
        candidates: all,
        episodes: counter.episodes(),
        retries: counter.retries(),
    })
}
