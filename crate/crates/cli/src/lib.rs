//! Command-line experiment runner for the `drgp` library.
//!
//! Each subcommand reads a flat `key = value` config, solves one or more
//! robust estimation problems and writes CSV/JSON artifacts plus a SHA-256
//! `manifest.json` into the output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::RunOptions;
pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "drgp", version, about = "Wasserstein-robust Gaussian process regression and inverse problems")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for multi-instance commands.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Record and write the Frank-Wolfe trace.
    #[arg(long, global = true)]
    pub trace: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance.
    Solve { config: PathBuf },
    /// Prior-to-posterior distances for the baseline and its variations.
    Table1 { config: PathBuf },
    /// Correlation, band and sample-path data for figures.
    Figures { config: PathBuf },
    /// Solve once per value of one config key.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...`
        #[arg(long)]
        vary: String,
    },
    /// Game value and determinant across truncation levels.
    Convergence {
        config: PathBuf,
        /// `N1,N2,...`
        #[arg(long)]
        levels: String,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

/// Runs a parsed command line and returns a one-line report.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let opts = RunOptions {
        out: cli.out.clone(),
        seed: cli.seed,
        jobs: cli.jobs,
        trace: cli.trace,
    };
    let out = opts.out.display();
    match &cli.command {
        Command::Solve { config } => {
            let s = commands::run_solve(&load(config)?, &opts)?;
            Ok(format!(
                "J nominal {} worst {} (gap {:e}, {} iterations); wrote {out}",
                s.nominal_value, s.worst_value, s.gap, s.iterations
            ))
        }
        Command::Table1 { config } => {
            let rows = commands::run_table1(&load(config)?, &opts)?;
            Ok(format!("{} columns; wrote {out}", rows.len()))
        }
        Command::Figures { config } => {
            let m = commands::run_figures(&load(config)?, &opts)?;
            Ok(format!("{} measures; wrote {out}", m.len()))
        }
        Command::Sweep { config, vary } => {
            let rows = commands::run_sweep(&load(config)?, &opts, vary)?;
            Ok(format!("{} runs; wrote {out}", rows.len()))
        }
        Command::Convergence { config, levels } => {
            let r = commands::run_convergence(&load(config)?, &opts, levels)?;
            Ok(format!("determinant trend {:?}; wrote {out}", r.determinant.trend))
        }
    }
}
