//! Run configurations, parallel evaluation with JSONL trace persistence and
//! resume, reports, comparisons, trace metrics, and turn-budget sweeps.
//!
//! A run directory holds `run.json` (metadata, no secrets), `traces.jsonl`
//! (one trace per line), `report.json`, and for learned methods
//! `examples.json` plus `learn.json`.

pub mod metrics;
pub mod report;
pub mod script;

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::BudgetLimits;
use crate::learn::{learn_bfl, learn_gfl, ExampleSet, LearnConfig, LearnContext};
use crate::llm::{HttpBackend, LanguageModel, LmConfig};
use crate::orchestrator::{solve, Episode, Mode, Trace};
use crate::tasks::{load_problems, EmbeddingTable, Problem, TaskError, TaskVerifier, Verifier};
use crate::workspace::{KernelFactory, ScriptedExecutor, ScriptedFactory, WorkspaceFactory};

pub use metrics::{conversation_metrics, summarize, trace_metrics, MetricsSummary, TraceMetrics};
pub use report::{build_report, compare, paired_t_test, Comparison, RunReport, TTest};
pub use script::ScriptBook;

pub const TRACES_FILE: &str = "traces.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const META_FILE: &str = "run.json";
pub const EXAMPLES_FILE: &str = "examples.json";
pub const LEARN_FILE: &str = "learn.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("problem ids differ: {0}")]
    IdMismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cot_0shot")]
    CoT0,
    #[serde(rename = "codeact_0shot")]
    CodeAct0,
    #[serde(rename = "codeadapt_bfl")]
    CodeAdaptBfl,
    #[serde(rename = "codeadapt_gfl")]
    CodeAdaptGfl,
    /// GFL selection over chain-of-thought traces.
    #[serde(rename = "cot_gfl")]
    CoTGfl,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::CoT0, Method::CodeAct0, Method::CodeAdaptBfl, Method::CodeAdaptGfl, Method::CoTGfl];

    pub fn label(self) -> &'static str {
        match self {
            Method::CoT0 => "cot_0shot",
            Method::CodeAct0 => "codeact_0shot",
            Method::CodeAdaptBfl => "codeadapt_bfl",
            Method::CodeAdaptGfl => "codeadapt_gfl",
            Method::CoTGfl => "cot_gfl",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Method::CoT0 | Method::CoTGfl => Mode::CoTSingleShot,
            _ => Mode::CodeActLoop,
        }
    }

    pub fn needs_learning(self) -> bool {
        matches!(self, Method::CodeAdaptBfl | Method::CodeAdaptGfl | Method::CoTGfl)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// OpenAI-compatible chat completions.
    Http(LmConfig),
    /// A [`ScriptBook`] JSON file.
    Script { path: PathBuf },
}

impl BackendConfig {
    pub fn model_id(&self) -> String {
        match self {
            BackendConfig::Http(c) => c.model_id.clone(),
            BackendConfig::Script { path } => format!("script:{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkspaceConfig {
    Kernel(KernelFactory),
    /// Every cell succeeds instantly with no output. For scripted runs.
    Stub,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Task label for reports.
    pub task: String,
    pub method: Method,
    /// Evaluation problems, JSONL.
    pub problems: PathBuf,
    /// Training problems for learned methods, JSONL.
    #[serde(default)]
    pub train_problems: Option<PathBuf>,
    /// A persisted example set; skips learning when given.
    #[serde(default)]
    pub examples: Option<PathBuf>,
    /// GloVe-format vectors, needed for creativity problems.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub backend: BackendConfig,
    pub workspace: WorkspaceConfig,
    #[serde(default)]
    pub limits: BudgetLimits,
    #[serde(default)]
    pub learn: LearnConfig,
    #[serde(default = "one")]
    pub parallelism: usize,
    pub output_dir: PathBuf,
}

fn one() -> usize {
    1
}

impl RunConfig {
    /// Loads a JSON config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.problems);
        fix(&mut cfg.output_dir);
        for p in [&mut cfg.train_problems, &mut cfg.examples, &mut cfg.embeddings].into_iter().flatten() {
            fix(p);
        }
        if let BackendConfig::Script { path } = &mut cfg.backend {
            fix(path);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.limits.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.parallelism == 0 {
            return Err(HarnessError::Config("parallelism must be at least 1".into()));
        }
        if self.method.needs_learning() && self.examples.is_none() {
            self.learn.validate().map_err(HarnessError::Config)?;
            if self.train_problems.is_none() {
                return Err(HarnessError::Config(format!(
                    "method {} needs train_problems or examples",
                    self.method.label()
                )));
            }
        }
        if let BackendConfig::Http(c) = &self.backend {
            c.validate().map_err(HarnessError::Config)?;
        }
        Ok(())
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            task: self.task.clone(),
            method: self.method,
            model: self.backend.model_id(),
            limits: self.limits.clone(),
            learn: self.method.needs_learning().then(|| self.learn.clone()),
        }
    }
}

/// What a run was; persisted as `run.json` and embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub task: String,
    pub method: Method,
    pub model: String,
    pub limits: BudgetLimits,
    #[serde(default)]
    pub learn: Option<LearnConfig>,
}

/// Summary of a learning phase, persisted as `learn.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnSummary {
    pub method: Method,
    pub episodes: usize,
    pub retries: usize,
    pub candidate_scores: Vec<Vec<f64>>,
    pub gen_scores: Vec<Vec<Option<f64>>>,
}

/// Serializes trace writes from worker threads; one line per trace,
/// flushed immediately.
pub struct TraceAppender {
    file: Mutex<File>,
    path: PathBuf,
}

impl TraceAppender {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok(Self { file: Mutex::new(file), path })
    }

    pub fn append(&self, trace: &Trace) -> Result<(), HarnessError> {
        let mut line = serde_json::to_string(trace).expect("serializable");
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        f.flush().map_err(io_err(&self.path))
    }
}

/// Reads persisted traces. A torn final line (crash mid-write) is dropped
/// and the file rewritten without it, so appends stay line-aligned.
pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<Trace>, HarnessError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(io_err(path))?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(io_err(path))?;
    let mut out = Vec::with_capacity(lines.len());
    let mut torn = false;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Trace>(line) {
            Ok(t) => out.push(t),
            Err(_) if i + 1 == lines.len() => torn = true,
            Err(source) => return Err(HarnessError::Json { path: path.to_path_buf(), source }),
        }
    }
    if torn {
        tracing::warn!(path = %path.display(), "dropping torn last trace line");
        let mut text = String::new();
        for t in &out {
            text.push_str(&serde_json::to_string(t).expect("serializable"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(io_err(path))?;
    }
    Ok(out)
}

/// Resolved run inputs shared by learning and evaluation.
pub struct Setup {
    pub lm: Box<dyn LanguageModel>,
    pub factory: Box<dyn WorkspaceFactory>,
    pub verifier: Box<dyn Verifier>,
}

impl Setup {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, HarnessError> {
        let lm: Box<dyn LanguageModel> = match &cfg.backend {
            BackendConfig::Http(c) => Box::new(HttpBackend::new(c.clone())),
            BackendConfig::Script { path } => Box::new(ScriptBook::load(path).map_err(io_err(path))?),
        };
        let factory: Box<dyn WorkspaceFactory> = match &cfg.workspace {
            WorkspaceConfig::Kernel(k) => Box::new(k.clone()),
            WorkspaceConfig::Stub => Box::new(ScriptedFactory::new(ScriptedExecutor::new())),
        };
        let verifier = match &cfg.embeddings {
            Some(p) => TaskVerifier::with_embeddings(Arc::new(EmbeddingTable::load(p)?)),
            None => TaskVerifier::new(),
        };
        Ok(Self { lm, factory, verifier: Box::new(verifier) })
    }
}

fn pool(n: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

/// Runs the learning phase for a learned method and returns the example set.
pub fn learn_examples(cfg: &RunConfig, setup: &Setup) -> Result<(ExampleSet, LearnSummary), HarnessError> {
    let train_path = cfg
        .train_problems
        .as_ref()
        .ok_or_else(|| HarnessError::Config("train_problems is required for learning".into()))?;
    let train = load_problems(train_path)?;
    let ctx = LearnContext {
        lm: setup.lm.as_ref(),
        factory: setup.factory.as_ref(),
        verifier: setup.verifier.as_ref(),
        limits: &cfg.limits,
        mode: cfg.method.mode(),
    };
    let outcome = pool(cfg.parallelism)?.install(|| match cfg.method {
        Method::CodeAdaptBfl => learn_bfl(&train, &cfg.learn, &ctx),
        _ => learn_gfl(&train, &cfg.learn, &ctx),
    });
    let outcome = outcome.map_err(HarnessError::Config)?;
    let summary = LearnSummary {
        method: cfg.method,
        episodes: outcome.episodes,
        retries: outcome.retries,
        candidate_scores: outcome.candidates.iter().map(|cs| cs.iter().map(|c| c.score).collect()).collect(),
        gen_scores: outcome.candidates.iter().map(|cs| cs.iter().map(|c| c.gen_score).collect()).collect(),
    };
    Ok((outcome.examples, summary))
}

/// Examples from `cfg.examples`, a previous run in the same directory, or a
/// fresh learning phase (persisted for reuse).
fn resolve_examples(cfg: &RunConfig, setup: &Setup) -> Result<Vec<String>, HarnessError> {
    if !cfg.method.needs_learning() {
        return Ok(Vec::new());
    }
    if let Some(p) = &cfg.examples {
        return Ok(ExampleSet::load(p).map_err(io_err(p))?.examples);
    }
    let cached = cfg.output_dir.join(EXAMPLES_FILE);
    if cached.exists() {
        return Ok(ExampleSet::load(&cached).map_err(io_err(&cached))?.examples);
    }
    let (set, summary) = learn_examples(cfg, setup)?;
    set.save(&cached).map_err(io_err(&cached))?;
    write_json(&cfg.output_dir.join(LEARN_FILE), &summary)?;
    Ok(set.examples)
}

pub fn eval_episode_id(problem: &Problem) -> String {
    format!("eval/{}", problem.id)
}

/// Evaluates every problem not yet persisted in the run directory, then
/// writes and returns the report.
pub fn run(cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let setup = Setup::from_config(cfg)?;
    run_with(cfg, &setup)
}

/// [`run`] with an already-built backend, workspace factory, and verifier;
/// `cfg.backend` and `cfg.workspace` only label the run.
pub fn run_with(cfg: &RunConfig, setup: &Setup) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join(META_FILE), &cfg.meta())?;
    let problems = load_problems(&cfg.problems)?;
    let examples = resolve_examples(cfg, setup)?;

    let traces_path = dir.join(TRACES_FILE);
    let done: HashSet<String> = read_traces(&traces_path)?.into_iter().map(|t| t.problem_id).collect();
    let todo: Vec<&Problem> = problems.iter().filter(|p| !done.contains(&p.id)).collect();
    if !done.is_empty() {
        tracing::info!(skipped = done.len(), remaining = todo.len(), "resuming run");
    }
    let appender = TraceAppender::open(&traces_path)?;
    let mode = cfg.method.mode();
    pool(cfg.parallelism)?.install(|| {
        todo.par_iter().try_for_each(|p| {
            let ep = Episode::new(eval_episode_id(p), (*p).clone(), cfg.limits.clone())
                .with_examples(examples.clone())
                .with_mode(mode);
            let mut trace = match setup.factory.create(&ep.id) {
                Ok(mut ws) => solve(&ep, setup.lm.as_ref(), &mut ws),
                Err(e) => Trace::failed(&ep, e.to_string()),
            };
            trace.score_with(setup.verifier.as_ref(), p);
            appender.append(&trace)
        })
    })?;

    let ids: HashSet<&str> = problems.iter().map(|p| p.id.as_str()).collect();
    let traces: Vec<Trace> =
        read_traces(&traces_path)?.into_iter().filter(|t| ids.contains(t.problem_id.as_str())).collect();
    let report = build_report(cfg.meta(), &traces);
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Rebuilds a run directory's report from `run.json` and `traces.jsonl`.
pub fn regenerate_report(run_dir: impl AsRef<Path>) -> Result<RunReport, HarnessError> {
    let dir = run_dir.as_ref();
    let meta: RunMeta = read_json(&dir.join(META_FILE))?;
    let traces = read_traces(dir.join(TRACES_FILE))?;
    let report = build_report(meta, &traces);
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

pub fn load_report(run_dir: impl AsRef<Path>) -> Result<RunReport, HarnessError> {
    read_json(&run_dir.as_ref().join(REPORT_FILE))
}

/// Metrics for every trace in a run directory.
pub fn run_metrics(run_dir: impl AsRef<Path>) -> Result<Vec<TraceMetrics>, HarnessError> {
    Ok(read_traces(run_dir.as_ref().join(TRACES_FILE))?.iter().map(trace_metrics).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub max_turns: u32,
    pub mean_score: f64,
    pub sem: f64,
    pub mean_tokens: f64,
    pub run_dir: PathBuf,
}

/// One run per `max_turns` setting under `output_dir/turns-{t}`. Learned
/// methods learn once, under the base limits, and share the examples.
pub fn sweep(cfg: &RunConfig, turns: &[u32]) -> Result<Vec<SweepPoint>, HarnessError> {
    cfg.validate()?;
    let setup = Setup::from_config(cfg)?;
    sweep_with(cfg, &setup, turns)
}

pub fn sweep_with(cfg: &RunConfig, setup: &Setup, turns: &[u32]) -> Result<Vec<SweepPoint>, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let mut base = cfg.clone();
    if cfg.method.needs_learning() && cfg.examples.is_none() {
        resolve_examples(cfg, setup)?;
        base.examples = Some(cfg.output_dir.join(EXAMPLES_FILE));
    }
    let mut points = Vec::with_capacity(turns.len());
    for &t in turns {
        let mut sub = base.clone();
        sub.limits = sub.limits.with_max_turns(t);
        sub.output_dir = cfg.output_dir.join(format!("turns-{t}"));
        let r = run_with(&sub, setup)?;
        points.push(SweepPoint {
            max_turns: t,
            mean_score: r.mean_score,
            sem: r.sem,
            mean_tokens: r.tokens.mean,
            run_dir: sub.output_dir,
        });
    }
    write_json(&cfg.output_dir.join("sweep.json"), &points)?;
    Ok(points)
}
