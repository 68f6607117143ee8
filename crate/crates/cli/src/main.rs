//! `stylematch`: reproducible experiments from one JSON config.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Ctx, EvalTarget, Method};
use config::{ExperimentConfig, Overrides, ValidationError};

#[derive(Debug, Parser)]
#[command(name = "stylematch", version, about = "Style-space compatibility experiments")]
struct Cli {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces the synthetic-data, split and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
    /// Override one config value, e.g. `--set train.max_iterations=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus (items.jsonl, pairs.csv, provenance.json).
    Synth,
    /// Train the style-space model.
    Train,
    /// Evaluate a checkpoint, the ground-truth oracle, or an untrained model.
    Eval {
        #[arg(long, conflicts_with_all = ["cheat", "untrained"], required_unless_present_any = ["cheat", "untrained"])]
        checkpoint: Option<PathBuf>,
        /// Score with the generator's true distortions (synthetic data only).
        #[arg(long, conflicts_with = "untrained")]
        cheat: bool,
        #[arg(long)]
        untrained: bool,
    },
    /// Train the five ablation presets and tabulate their AUC.
    Ablate {
        /// Train presets on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Fit and evaluate a baseline.
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
    },
    /// 2-D PCA projection of raw features, or of style vectors from a checkpoint.
    Project {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ValidationError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<stylematch::Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ov = Overrides { out: cli.out, seed: cli.seed, set: cli.set };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &ov)?;
    let ctx = Ctx { cfg, quiet: cli.quiet };
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval { checkpoint, cheat, untrained } => {
            let target = match (checkpoint.as_deref(), cheat, untrained) {
                (Some(p), _, _) => EvalTarget::Checkpoint(p),
                (None, true, _) => EvalTarget::Cheat,
                _ => EvalTarget::Untrained,
            };
            commands::eval(&ctx, target)
        }
        Command::Ablate { parallel } => commands::ablate(&ctx, parallel),
        Command::Baseline { method } => commands::baseline(&ctx, method),
        Command::Project { checkpoint } => commands::project(&ctx, checkpoint.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
