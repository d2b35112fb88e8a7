//! Config-driven experiments around the `rbmd-core` solvers.

pub mod commands;
pub mod config;
pub mod error;
pub mod synthetic;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rbmd_core::Parallelism;

pub use commands::Invocation;
pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "rbmd", version, about = "Risk-budgeting portfolios by tamed mirror descent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Semi-analytic reference portfolio.
    Reference(Args),
    /// One run of each configured optimizer, with traces and a summary.
    Run(Args),
    /// Seeded replication sweep with divergence counts and median errors.
    Compare(Args),
    /// Long-format plot data from a run or compare output directory.
    FigureData(Args),
}

#[derive(Debug, Clone, PartialEq, Eq, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replications and sampling (1 runs sequentially).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Command {
    pub fn args(&self) -> &Args {
        match self {
            Command::Reference(a) | Command::Run(a) | Command::Compare(a) | Command::FigureData(a) => a,
        }
    }
}

/// Loads the config, runs the command and returns a one-line status.
pub fn execute(command: &Command) -> Result<String, CliError> {
    let args = command.args();
    let (config, config_text) = ExperimentConfig::load(&args.config)?;
    let parallelism = match args.threads {
        Some(0) => return Err(CliError::config("--threads must be at least 1")),
        Some(1) => Parallelism::Sequential,
        _ => Parallelism::Parallel,
    };
    let inv = Invocation {
        config,
        config_text,
        out: args.out.clone(),
        seed: args.seed,
        parallelism,
    };
    match command {
        Command::Reference(_) => {
            let rep = commands::cmd_reference(&inv)?;
            Ok(format!("reference weights {:?}, risk {:.6}", rep.weights, rep.risk))
        }
        Command::Run(_) => {
            let s = commands::cmd_run(&inv)?;
            Ok(format!("ran {} optimizer(s)", s.optimizers.len()))
        }
        Command::Compare(_) => {
            let c = commands::cmd_compare(&inv)?;
            Ok(format!("{} rows over {} replication(s)", c.rows.len(), inv.config.replications))
        }
        Command::FigureData(_) => {
            let n = commands::cmd_figure_data(&inv)?;
            Ok(format!("{n} points written"))
        }
    }
}
