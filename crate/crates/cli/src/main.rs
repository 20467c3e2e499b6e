//! Command-line front end: verification suites, coefficient tables, regime
//! advice, closeness studies, expectation comparisons, the β-sweep and
//! noise-scale traces.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use config::Format;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit status 2.
    Usage(String),
    /// A verification suite failed; exit status 1.
    Failed(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<batchbias::Error> for CliError {
    fn from(e: batchbias::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "batchbias",
    version,
    about = "Mini-batch noise bias experiments for Adam and SGD with momentum"
)]
pub struct Cli {
    /// TOML file with the command's settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Comma-separated suites for `verify`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub only: Option<Vec<batchbias::verify::Suite>>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant suites; exits nonzero on the first failing check.
    Verify,
    /// Table of C1..C5 and FB over a (β1, β2) grid.
    Coeffs,
    /// Regime ratio λ, batch-size thresholds and β advice.
    Regime {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        b: Option<usize>,
        #[arg(long = "b-simple", conflicts_with = "estimate_from")]
        b_simple: Option<f64>,
        /// Problem file (`[problem]` table and optional `theta`) to estimate B_simple from.
        #[arg(long = "estimate-from")]
        estimate_from: Option<PathBuf>,
    },
    /// Trajectory gap between the optimizer and its memoryless iteration over an η ladder.
    Closeness,
    /// Brute-force expected correction next to the assembled FB + MBN terms.
    Expect,
    /// Multi-epoch β-sweep on a synthetic task.
    Sweep,
    /// B_simple along an Adam training run.
    NoiseScale,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
