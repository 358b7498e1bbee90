//! `mfg`: experiment driver for the mean-field equilibrium solvers.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const RUNTIME: u8 = 1;
    /// Also what clap exits with on malformed arguments.
    pub const USAGE: u8 = 2;
    pub const CHECK_FAILED: u8 = 3;
    pub const CONFIG: u8 = 4;
    pub const UNKNOWN_ENV: u8 = 5;
    pub const OUTPUT: u8 = 6;
}

/// An error that maps to a specific exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

/// Wraps a message in a [`Failure`] carrying the given exit status.
pub fn fail(code: u8, message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Failure {
        code,
        message: message.into(),
    })
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

#[derive(Debug, Parser)]
#[command(
    name = "mfg",
    version,
    about = "Mean-field equilibrium solvers and their certificates"
)]
pub struct Cli {
    /// Worker threads for the grid-parallel stage loops (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Print the shipped malware experiment configuration and exit.
    #[arg(long)]
    pub print_default_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,

    /// Output root; overrides the configuration and MFG_OUTPUT_DIR.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve with the known transition kernel; writes <out>/exact/.
    SolveExact(Common),
    /// Solve from sampled transitions only; writes <out>/rl/.
    SolveRl(Common),
    /// Exploitability and a finite-population rollout of a solved atlas.
    Evaluate(Common),
    /// Per-stage distance between two solved atlases.
    Compare {
        /// Directory holding atlas.csv, or `exact` / `rl` under the output root.
        a: String,
        b: String,
        /// Configuration supplying thresholds and the output root.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the grid and the fully resolved configuration.
    Export(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Failure>().map_or(exit::RUNTIME, |f| f.code);
            ExitCode::from(code)
        }
    }
}
