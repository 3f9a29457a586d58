use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use codeloop::harness::{self, RunConfig, Setup};
use codeloop::tasks::{countdown, write_problems};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "codeloop", version, about = "Run, learn, and compare code-loop evaluations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a method on a task; resumes if the output directory has traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's parallelism.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Run only the learning phase and save the selected examples.
    Learn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild report.json from a run directory's traces.
    Report { run_dir: PathBuf },
    /// Compare run A against baseline B: savings and a paired t-test.
    Compare { run_a: PathBuf, run_b: PathBuf },
    /// One run per max_turns value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
        turns: Vec<u32>,
    },
    /// Per-trace metrics for a run directory.
    Metrics { run_dir: PathBuf },
    /// Write the 100 countdown problems as JSONL.
    Countdown {
        #[arg(long)]
        out: PathBuf,
    },
}

fn print(value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run { config, parallelism } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(p) = parallelism {
                cfg.parallelism = p;
            }
            let report = harness::run(&cfg)?;
            print(&report)
        }
        Command::Learn { config, out } => {
            let cfg = RunConfig::load(&config)?;
            cfg.validate()?;
            if !cfg.method.needs_learning() {
                anyhow::bail!("method {} does not learn examples", cfg.method.label());
            }
            let setup = Setup::from_config(&cfg)?;
            let (set, summary) = harness::learn_examples(&cfg, &setup)?;
            set.save(&out).with_context(|| format!("writing {}", out.display()))?;
            print(&summary)
        }
        Command::Report { run_dir } => print(&harness::regenerate_report(&run_dir)?),
        Command::Compare { run_a, run_b } => {
            let a = harness::load_report(&run_a)?;
            let b = harness::load_report(&run_b)?;
            print(&harness::compare(&a, &b)?)
        }
        Command::Sweep { config, turns } => {
            let cfg = RunConfig::load(&config)?;
            print(&harness::sweep(&cfg, &turns)?)
        }
        Command::Metrics { run_dir } => {
            let rows = harness::run_metrics(&run_dir)?;
            print(&serde_json::json!({ "summary": harness::summarize(&rows), "traces": rows }))
        }
        Command::Countdown { out } => {
            write_problems(&out, &countdown::generate()).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote 100 problems to {}", out.display());
            Ok(())
        }
    }
}
