//! Experiment runner behind the `qsl` binary: TOML configs, CSV tables and
//! the `simulate` / `fit` / `stream` / `report` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod tables;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "qsl", version, about = "Quantile super learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated datasets or streams as CSV.
    Simulate(RunArgs),
    /// Cross-validated super learner fits on i.i.d. data.
    Fit(RunArgs),
    /// Prequential run over a stream.
    Stream(RunArgs),
    /// Summarize run directories into tables and plot data.
    Report {
        /// Run directories written by `fit` or `stream`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn init_threads(jobs: Option<usize>) -> CliResult<()> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        // a second initialisation (e.g. in tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    Ok(())
}

fn load(args: &RunArgs) -> CliResult<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set `out`".into()))?;
    init_threads(args.jobs)?;
    Ok((cfg, out))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(args) => {
            let (cfg, out) = load(&args)?;
            commands::cmd_simulate(&cfg, &out)?;
        }
        Command::Fit(args) => {
            let (cfg, out) = load(&args)?;
            commands::cmd_fit(&cfg, &out)?;
        }
        Command::Stream(args) => {
            let (cfg, out) = load(&args)?;
            commands::cmd_stream(&cfg, &out)?;
        }
        Command::Report { inputs, out, jobs } => {
            init_threads(jobs)?;
            commands::cmd_report(&inputs, &out)?;
        }
    }
    Ok(())
}
