mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, USAGE};

/// Articulated-body dynamics, ABD-Net training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "abd", version)]
pub struct Cli {
    /// Seed for every random stream (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Single worker and zeroed wall-clock columns (also ABD_DETERMINISTIC=1).
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Compare ABA against the CRBA/RNEA oracle on random states.
    Dyncheck(commands::DyncheckArgs),
    /// Train a policy with PPO.
    TrainPolicy(commands::TrainPolicyArgs),
    /// Fit a dynamics model on random-policy transitions.
    TrainDynamics(commands::TrainDynamicsArgs),
    /// Evaluate a checkpoint under base-link mass changes.
    EvalShift(commands::EvalShiftArgs),
    /// Report per-stage forward-pass FLOPs.
    Flops(commands::FlopsArgs),
    /// Train every actor variant with shared seeds and configuration.
    Ablate(commands::AblateArgs),
    /// Re-run a command from its manifest.
    Replay(commands::ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dyncheck(_) => "dyncheck",
            Command::TrainPolicy(_) => "train-policy",
            Command::TrainDynamics(_) => "train-dynamics",
            Command::EvalShift(_) => "eval-shift",
            Command::Flops(_) => "flops",
            Command::Ablate(_) => "ablate",
            Command::Replay(_) => "replay",
        }
    }
}

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub deterministic: bool,
    /// Config taken verbatim from a manifest instead of files and flags.
    pub replay_config: Option<serde_json::Value>,
    pub out_override: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let env_det = std::env::var("ABD_DETERMINISTIC").is_ok_and(|v| v == "1");
    let deterministic = cli.deterministic || env_det;
    let workers = if deterministic { Some(1) } else { cli.workers };
    if let Some(n) = workers {
        if n == 0 {
            return Err(Failure::new(USAGE, "--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(USAGE, e.to_string()))?;
    }
    let ctx = Ctx {
        seed: cli.seed,
        workers,
        deterministic,
        replay_config: None,
        out_override: None,
    };
    commands::dispatch(cli.command, &ctx)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
