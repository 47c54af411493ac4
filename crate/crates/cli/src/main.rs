//! `evnet` command-line front end.
//!
//! Exit codes: 0 success, 2 usage/config errors, 3 numeric failures.

mod commands;
mod dataset;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Predictor;
use evnet_core::config::RunConfig;
use evnet_core::Error;

#[derive(Parser)]
#[command(name = "evnet", version, about = "Hierarchical trajectory prediction via spectrums")]
struct Cli {
    /// Run configuration (TOML). Defaults cover a synthetic run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed override; all randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus an epoch log.
    Train,
    /// Evaluate a predictor with best-of-K metrics.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "model")]
        predictor: Predictor,
        /// Samples per agent (default: metrics.k from the config).
        #[arg(long)]
        k: Option<usize>,
        /// Annotation file overriding the configured dataset.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predict futures for every track of an annotation file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Per-step and per-frequency energy fractions of the dataset.
    Energy {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Closed-form baseline predictions.
    Baseline {
        #[arg(long, value_enum)]
        predictor: Predictor,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> evnet_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let out = commands::out_dir(&cfg, cli.out.as_ref());
    match &cli.command {
        Command::Train => commands::cmd_train(&cfg, &out),
        Command::Eval { checkpoint, predictor, k, data } => commands::cmd_eval(
            &cfg,
            &out,
            checkpoint.as_deref(),
            *predictor,
            *k,
            data.as_deref(),
        ),
        Command::Predict { checkpoint, input, k } => {
            commands::cmd_predict(&cfg, &out, checkpoint, input, *k)
        }
        Command::Energy { data } => commands::cmd_energy(&cfg, &out, data.as_deref()),
        Command::Baseline { predictor, data } => {
            commands::cmd_baseline(&cfg, &out, *predictor, data.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Numeric(_) | Error::NonFinite(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
