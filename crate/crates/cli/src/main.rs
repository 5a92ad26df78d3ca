//! `d2cl`: simulate SEM benchmark data, featurize variable pairs, train the
//! dual-tower classifier, and evaluate inferred causal graphs.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// Exit codes: 0 success, 2 input error, 3 missing dependency, 4 internal
/// numerical failure.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: 2 }
    }

    pub fn missing(path: impl Into<String>) -> Self {
        Self {
            message: format!("missing required input: {}", path.into()),
            code: 3,
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: 4 }
    }

    pub fn from_input_error(e: d2cl_core::CoreError) -> Self {
        Self::input(e.to_string())
    }

    pub fn from_core(e: d2cl_core::CoreError) -> Self {
        use d2cl_core::CoreError::*;
        match e {
            Schema(_) | NodeOutOfRange { .. } | SelfLoop(_) | PairOutOfRange { .. }
            | SplitOverlap { .. } | Csv(_) | Json(_) => Self::input(e.to_string()),
            Io(_) => Self::missing(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

#[derive(Parser)]
struct GlobalArgs {
    /// JSON configuration file; --preset and --seed still apply on top.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset: desk, desk-smoke or paper-sim.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Base random seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweep cells.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Permit long-running presets (paper scale).
    #[arg(long, global = true, default_value_t = false)]
    allow_long: bool,
    /// Overwrite existing outputs.
    #[arg(long, global = true, default_value_t = false)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset bundle from a random SEM.
    Simulate,
    /// Validate an external data matrix and knowledge file.
    Ingest {
        /// Data matrix CSV (header x0..x{p-1}).
        #[arg(long)]
        data: PathBuf,
        /// Knowledge CSV (header source,target,label).
        #[arg(long)]
        knowledge: PathBuf,
    },
    /// Build the initial graph estimate and the pair-image cache.
    Featurize {
        /// Dataset bundle directory (from `simulate`).
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
    },
    /// Train a model on a dataset bundle.
    Train {
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Tower selection: cnn, gnn or dual.
        #[arg(long)]
        tower: Option<String>,
    },
    /// Score all pairs with a trained model and evaluate against ground truth.
    Evaluate {
        /// Model checkpoint stem (without extension).
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
    },
    /// Run an experiment grid (SNR sweep, optionally with label perturbation).
    Sweep,
    /// Embedding-perturbation experiment on a trained dual model.
    Perturb {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
    },
}

#[derive(Parser)]
#[command(name = "d2cl", version, about = "Discriminative causal structure learning pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

fn resolve_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match (&global.config, &global.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = global.workers {
        cfg.workers = workers;
    }
    if cfg.long_running && !global.allow_long {
        return Err(CliError::input(
            "this configuration is long-running; pass --allow-long to proceed",
        ));
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = (|| -> Result<(), CliError> {
        let cfg = resolve_config(&cli.global)?;
        match &cli.command {
            Command::Simulate => commands::simulate(&cli.global, &cfg),
            Command::Ingest { data, knowledge } => commands::ingest(&cli.global, data, knowledge),
            Command::Featurize { input } => commands::featurize(&cli.global, &cfg, input),
            Command::Train { input, tower } => {
                let mut cfg = cfg.clone();
                if let Some(tower) = tower {
                    cfg.tower = tower.clone();
                }
                commands::train(&cli.global, &cfg, input)
            }
            Command::Evaluate { model, input } => commands::evaluate(&cli.global, &cfg, model, input),
            Command::Sweep => commands::sweep(&cli.global, &cfg),
            Command::Perturb { model, input } => commands::perturb(&cli.global, &cfg, model, input),
        }
    })();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
