use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relex::{commands, CliResult, ModelKind, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "relex", version, about = "Relation extraction models: train, evaluate, predict")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (flat TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Confidence below which positive labels become `None`.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Number of runs an ensemble votes over.
    #[arg(long = "runs", global = true)]
    runs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fit a model and write its checkpoint, log and threshold
    Train,
    /// Score a checkpoint on the test set and write a report
    Eval,
    /// Write one prediction per test instance
    Predict,
    /// Turn multi-hop QA records and KB triples into document-chain data
    BuildMhred,
    /// Re-tune a classifier checkpoint's threshold on validation data
    TuneThreshold,
    /// Majority-vote tuple predictions from several runs
    Ensemble,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        model: cli.model,
        out: cli.out,
        threshold: cli.threshold,
        runs: cli.runs,
    });
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg).map(drop),
        Command::Predict => commands::predict(&cfg),
        Command::BuildMhred => commands::build_mhred(&cfg).map(drop),
        Command::TuneThreshold => commands::tune_checkpoint(&cfg).map(drop),
        Command::Ensemble => commands::ensemble(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
