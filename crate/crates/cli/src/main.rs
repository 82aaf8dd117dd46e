//! `instructkit`: command-line front end for the corpus pipeline.
//!
//! Exit codes: 0 ok, 1 stage failure, 2 configuration or usage error.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use instructkit::corpus::InstructionRecord;
use instructkit::eval::{self, PredictionRecord};
use instructkit::ndjson;
use instructkit::pipeline::{self, Overrides, PipelineError, Run};
use instructkit::stats;

#[derive(Parser)]
#[command(name = "instructkit", version, about = "Build and evaluate e-commerce instruction corpora")]
struct Cli {
    /// Run config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run directory (pipeline stages) or output file (eval, human-eval).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct StageArgs {
    /// Pseudo-label cache file; overrides the config.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate every dataset.
    Ingest(StageArgs),
    /// Derive atomic tasks from the ingested samples.
    Forge(StageArgs),
    /// Pseudo-label input-only atomic tasks.
    PseudoLabel(StageArgs),
    /// Render samples into instruction records.
    Render(StageArgs),
    /// Rule and judge filtering.
    Filter(StageArgs),
    /// Train/test split.
    Split(StageArgs),
    /// All stages in order.
    Run(StageArgs),
    /// Score generations against gold records.
    Eval {
        /// Predictions: NDJSON of {record_id, generated}.
        #[arg(long)]
        predictions: PathBuf,
        /// Run directory supplying gold test records and task specs.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Gold records (NDJSON); defaults to the run's test split.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Task specs (TOML); defaults to the run's rendered tasks.
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Blinded side-by-side manifest for human comparison of two runs.
    HumanEval {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        /// Gold records (NDJSON).
        #[arg(long)]
        gold: PathBuf,
        /// Records per task.
        #[arg(long, default_value_t = 100)]
        per_task: usize,
    },
    /// Task and instance counts by language and paradigm.
    Stats {
        /// Task-count manifest (TOML) or run directory.
        path: PathBuf,
    },
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn failed(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn prepare(cli: &Cli, args: &StageArgs) -> Result<Run, Failure> {
    let config = cli
        .config
        .as_deref()
        .ok_or_else(|| usage(anyhow::anyhow!("--config is required")))?;
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
        pseudo_cache: args.cache.clone(),
    };
    Ok(Run::prepare(config, &overrides)?)
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    ndjson::read_file(path).map_err(|e| usage(e.into()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text)
            .with_context(|| format!("cannot write {}", p.display()))
            .map_err(failed),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest(a) => prepare(cli, a)?.ingest()?,
        Command::Forge(a) => prepare(cli, a)?.forge()?,
        Command::PseudoLabel(a) => prepare(cli, a)?.pseudo_label()?,
        Command::Render(a) => prepare(cli, a)?.render()?,
        Command::Filter(a) => prepare(cli, a)?.filter()?,
        Command::Split(a) => prepare(cli, a)?.split()?,
        Command::Run(a) => {
            let run = prepare(cli, a)?;
            let manifest = run.run_all()?;
            for (stage, counts) in &manifest.counts {
                let parts: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{stage}: {}", parts.join(" "));
            }
            println!("run directory: {}", run.out.display());
        }
        Command::Eval {
            predictions,
            run,
            gold,
            tasks,
        } => {
            let gold_path = gold
                .clone()
                .or_else(|| run.as_ref().map(|r| r.join(pipeline::TEST_FILE)))
                .ok_or_else(|| usage(anyhow::anyhow!("pass --gold or --run")))?;
            let tasks_path = tasks
                .clone()
                .or_else(|| run.as_ref().map(|r| r.join(pipeline::TASKS_FILE)))
                .ok_or_else(|| usage(anyhow::anyhow!("pass --tasks or --run")))?;
            let gold: Vec<InstructionRecord> = read_records(&gold_path)?;
            let preds: Vec<PredictionRecord> = read_records(predictions)?;
            let specs = pipeline::read_task_file(&tasks_path).map_err(|e| usage(anyhow::anyhow!(e)))?;
            let report = eval::evaluate_run(&preds, &gold, &pipeline::task_map(specs)).map_err(|e| failed(e.into()))?;
            print!("{}", report.to_table());
            if let Some(out) = &cli.out {
                let json = serde_json::to_string_pretty(&report).expect("report serializes");
                emit(Some(out), &(json + "\n"))?;
            }
        }
        Command::HumanEval {
            run_a,
            run_b,
            gold,
            per_task,
        } => {
            let a: Vec<PredictionRecord> = read_records(run_a)?;
            let b: Vec<PredictionRecord> = read_records(run_b)?;
            let g: Vec<InstructionRecord> = read_records(gold)?;
            let rows = eval::build_human_eval_manifest(&a, &b, &g, *per_task, cli.seed.unwrap_or(0))
                .map_err(|e| failed(e.into()))?;
            emit(cli.out.as_deref(), &ndjson::to_string(&rows))?;
        }
        Command::Stats { path } => {
            let table = stats::stats_for_path(path).map_err(|e| usage(e.into()))?;
            print!("{}", table.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
