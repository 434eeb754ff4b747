//! Command-line pipeline: generate scenarios, estimate densities, score
//! them against the ground truth and run the full benchmark.

pub mod commands;
pub mod config;
pub mod failure;
pub mod heatmap;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "celldense", version, about = "Spatial density estimation from radio-cell counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    /// TOML run configuration; defaults are used for anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory, created if missing (default `out`; `toy` writes
    /// its fixture only when given).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Directory holding the inputs of `estimate` and `evaluate`
    /// (defaults to the output directory).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,

    /// Run independent estimators and distance computations concurrently.
    #[arg(long, global = true)]
    pub parallel: bool,

    /// Exit successfully even when an iterative estimator hit its cap.
    #[arg(long, global = true)]
    pub allow_nonconverged: bool,

    /// Print the default configuration and exit.
    #[arg(long)]
    pub print_defaults: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario and dump it.
    Generate,
    /// Run the configured estimators on a dump.
    Estimate,
    /// Score the estimates of a directory against its ground truth.
    Evaluate,
    /// Walk through the three-tile toy instance.
    Toy,
    /// Generate, estimate and evaluate in one go.
    Bench,
}

impl Cli {
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn input_dir(&self) -> PathBuf {
        self.input.clone().unwrap_or_else(|| self.out_dir())
    }
}

/// Runs the parsed command line.
pub fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.print_defaults {
        print!("{}", RunConfig::default().to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::Config(anyhow::anyhow!("no command given; see --help")));
    };
    match command {
        Command::Generate => commands::generate(cli),
        Command::Estimate => commands::estimate(cli),
        Command::Evaluate => commands::evaluate(cli),
        Command::Toy => commands::toy(cli),
        Command::Bench => commands::bench(cli),
    }
}
