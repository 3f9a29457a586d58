//! Scripted episodes reused by the integration and acceptance tests.

use codeloop::budget::BudgetLimits;
use codeloop::llm::{FnBackend, ReplayBackend, ScriptEntry};
use codeloop::tasks::collie::{self, Constraint};
use codeloop::tasks::typos;
use codeloop::workspace::{ScriptedCell, ScriptedExecutor, ScriptedFactory, VarValue};
use codeloop::{CompletionRequest, CompletionResult, Episode, LmError, Problem, Role, WorkspaceSession};
use regex::Regex;

use super::{load_transcript, Transcript};

pub const WALK_TOKENS: [u64; 3] = [411, 175, 264];
/// Call latencies and cell durations chosen so that floors land on the
/// recorded 3, 4 and 5 seconds.
pub const WALK_LATENCY: [f64; 3] = [2.0, 0.9, 0.8];
pub const WALK_CELL_SECS: [f64; 2] = [1.2, 0.3];

pub fn walkthrough_problem() -> Problem {
    collie::problem(
        "walkthrough",
        vec![
            Constraint::SentenceCount { n: 4 },
            Constraint::LastWords {
                words: ["walk", "tumbling", "another", "lunatic"].map(String::from).to_vec(),
            },
        ],
    )
}

pub struct Walkthrough {
    pub transcript: Transcript,
    pub episode: Episode,
    pub backend: ReplayBackend,
    pub session: WorkspaceSession,
}

/// The recorded Collie transcript as a replay: its three assistant turns,
/// and a workspace that prints what the transcript shows.
pub fn walkthrough() -> Walkthrough {
    let transcript = load_transcript("collie");
    let assistant: Vec<String> =
        transcript.turns.iter().filter(|t| t.role == Role::Assistant).map(|t| t.content.clone()).collect();
    let script = assistant
        .iter()
        .zip(WALK_TOKENS.iter().zip(WALK_LATENCY))
        .map(|(text, (&tok, lat))| ScriptEntry::new(text.clone(), tok, lat));
    let outputs: Vec<String> = transcript
        .turns
        .iter()
        .filter(|t| t.role == Role::User)
        .map(|t| super::feedback_blocks(&t.content).remove(0).2)
        .collect();
    let exec = ScriptedExecutor::new()
        .on("create_paragraph", ScriptedCell::ok(outputs[0].clone(), WALK_CELL_SECS[0]))
        .on("fix_sentence", ScriptedCell::ok(outputs[1].clone(), WALK_CELL_SECS[1]));
    Walkthrough {
        transcript,
        episode: Episode::new("eval/walkthrough", walkthrough_problem(), BudgetLimits::default()),
        backend: ReplayBackend::new(script),
        session: WorkspaceSession::new("eval/walkthrough", Box::new(exec)),
    }
}

/// Ten prose-only turns, then a final guess that returns inline text.
pub fn prose_backend() -> ReplayBackend {
    let mut script: Vec<ScriptEntry> =
        (0..10).map(|i| ScriptEntry::new(format!("Thinking about it, step {i}."), 100, 1.0)).collect();
    script.push(ScriptEntry::new("<return>my best guess</return>", 20, 1.0));
    ReplayBackend::new(script)
}

fn reply(text: impl Into<String>, tokens: u64) -> Result<CompletionResult, LmError> {
    Ok(CompletionResult { text: text.into(), output_tokens: tokens, latency: 1.0, tokens_estimated: false })
}

fn steps_taken(req: &CompletionRequest<'_>) -> usize {
    req.conversation.iter().filter(|t| t.role == Role::Assistant).count()
}

// ---- a problem that needs exactly k turns ----

pub fn k_turn_problem(k: u32) -> Problem {
    typos::problem(format!("k{k:02}"), "teh anwser", format!("the answer {k}"))
}

/// Turns 1..k-1 run a work cell; turn k binds `ans` in a cell and returns
/// it. Any later call repeats turn k.
pub fn k_turn_backend() -> FnBackend<impl Fn(&CompletionRequest<'_>) -> Result<CompletionResult, LmError> + Send + Sync> {
    FnBackend::new(|req: &CompletionRequest<'_>| {
        let pid = req.episode_id.rsplit('/').next().unwrap();
        let k: usize = pid.trim_start_matches('k').parse().unwrap();
        let step = steps_taken(req);
        if step + 1 < k {
            reply(format!("<turn>Working.\n<code name=\"work{step}\">\n```python\nx = {step}\n```\n</code>\n</turn>"), 40)
        } else {
            reply(
                format!("<turn>Done.\n<code name=\"bind_{pid}\">\n```python\nans = 'the answer {k}'\n```\n</code>\n<return var=\"ans\">\n</turn>"),
                60,
            )
        }
    })
}

pub fn k_turn_factory(ks: impl IntoIterator<Item = u32>) -> ScriptedFactory {
    let mut exec = ScriptedExecutor::new();
    for k in ks {
        exec = exec.on(
            format!("bind_k{k:02}"),
            ScriptedCell::ok("", 0.5).binds("ans", VarValue::Str(format!("the answer {k}"))),
        );
    }
    ScriptedFactory::new(exec)
}

// ---- generalization corpus ----

pub const CORPUS_N: usize = 5;
pub const CORPUS_M: usize = 6;

pub fn corpus_problems() -> Vec<Problem> {
    (0..CORPUS_N).map(|i| typos::problem(format!("p{i}"), &format!("teh cat {i}"), format!("the cat {i}"))).collect()
}

/// Strategy label written into attempt `j` on problem `i`.
pub fn strategy(i: usize, j: usize) -> usize {
    (i * 3 + j * 5) % 7
}

/// Output tokens of attempt `j` on problem `i`.
pub fn attempt_tokens(i: usize, j: usize) -> u64 {
    100 + ((i * 7 + j * 13) % 11) as u64 * 10
}

/// Whether an example using strategy `s` lets the model solve problem `t`.
pub fn transfers(s: usize, t: usize) -> bool {
    (s * s + 3 * t + s * t) % 5 < 2 + usize::from(s == 4)
}

/// Every training attempt answers correctly with some strategy label;
/// cross-evaluation succeeds exactly when the shown example's strategy
/// transfers to the target.
pub fn corpus_backend() -> FnBackend<impl Fn(&CompletionRequest<'_>) -> Result<CompletionResult, LmError> + Send + Sync> {
    let marker = Regex::new(r"# strategy S(\d+)").unwrap();
    FnBackend::new(move |req: &CompletionRequest<'_>| {
        let parts: Vec<&str> = req.episode_id.split('/').collect();
        let idx = |p: &str| p.trim_start_matches('p').parse::<usize>().unwrap();
        match parts.as_slice() {
            ["train", p, j] => {
                let (i, j) = (idx(p), j.parse::<usize>().unwrap());
                reply(
                    format!(
                        "<turn>\n# strategy S{}\n<return>the cat {i}</return>\n</turn>",
                        strategy(i, j)
                    ),
                    attempt_tokens(i, j),
                )
            }
            ["gen", _, _, t] | ["eval", t] => {
                let t = idx(t);
                let user = req.conversation.iter().find(|c| c.role == Role::User).unwrap();
                let s: Option<usize> = marker.captures(&user.content).map(|c| c[1].parse().unwrap());
                let answer = match s {
                    Some(s) if transfers(s, t) => format!("the cat {t}"),
                    _ => "a dog".to_string(),
                };
                reply(format!("<turn>\n<return>{answer}</return>\n</turn>"), 50)
            }
            _ => Err(LmError::ExhaustedScript),
        }
    })
}

pub fn stub_factory() -> ScriptedFactory {
    ScriptedFactory::new(ScriptedExecutor::new())
}

/// Oracle gen score for attempt `(i, j)`: own score 1 plus cross scores,
/// averaged over all problems.
pub fn oracle_gen_score(i: usize, j: usize) -> f64 {
    let s = strategy(i, j);
    let hits = (0..CORPUS_N).filter(|&t| t != i && transfers(s, t)).count();
    (1.0 + hits as f64) / CORPUS_N as f64
}

/// The `keep` attempts per problem that survive score filtering, judged from
/// the script alone: equal scores and turns, so fewer tokens then earlier
/// attempt.
pub fn oracle_kept(i: usize, keep: usize) -> Vec<usize> {
    let mut js: Vec<usize> = (0..CORPUS_M).collect();
    js.sort_by_key(|&j| (attempt_tokens(i, j), j));
    js.truncate(keep);
    js
}

/// Exhaustive argmax of mean gen score over every choice of `k` distinct
/// problems with one kept attempt each. Returns the winners and whether the
/// maximum was unique.
pub fn oracle_gfl(k: usize, keep: usize) -> (Vec<(usize, usize)>, bool) {
    let kept: Vec<Vec<usize>> = (0..CORPUS_N).map(|i| oracle_kept(i, keep)).collect();
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    let mut unique = true;
    let mut choose = |combo: &[usize]| {
        // every assignment of a kept attempt to each chosen problem
        let mut idx = vec![0usize; combo.len()];
        loop {
            let picks: Vec<(usize, usize)> = combo.iter().zip(&idx).map(|(&i, &x)| (i, kept[i][x])).collect();
            let mean = picks.iter().map(|&(i, j)| oracle_gen_score(i, j)).sum::<f64>() / k as f64;
            match &best {
                Some((b, _)) if (mean - b).abs() < 1e-12 => unique = false,
                Some((b, _)) if mean < *b => {}
                _ => {
                    best = Some((mean, picks));
                    unique = true;
                }
            }
            let mut pos = 0;
            loop {
                if pos == idx.len() {
                    return;
                }
                idx[pos] += 1;
                if idx[pos] < kept[combo[pos]].len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    };
    fn combos(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            combos(n, k, i + 1, cur, f);
            cur.pop();
        }
    }
    combos(CORPUS_N, k, 0, &mut Vec::new(), &mut choose);
    let (_, mut picks) = best.unwrap();
    picks.sort_unstable();
    (picks, unique)
}
