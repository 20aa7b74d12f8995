//! Batch driver for the `cdo-lab` binary: certify a volatility family,
//! tabulate the Laplace exponent, simulate scenarios and run the
//! verification suites from a TOML scenario file.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use cdo_hjmm::hjmm::DriftConvention;
use cdo_hjmm::Verdict;
use clap::{Parser, Subcommand};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Pass = 0,
    Fail = 1,
    Config = 2,
    Indeterminate = 3,
    Runtime = 4,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_verdict(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Exit::Pass,
            Verdict::Fail => Exit::Fail,
            Verdict::Indeterminate => Exit::Indeterminate,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            exit: Exit::Config,
            message: msg.into(),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self {
            exit: Exit::Runtime,
            message: msg.into(),
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        Self::runtime(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "cdo-lab", version, about = "Lévy-driven HJMM term structures of CDO ratings")]
pub struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Simulate or verify without a passing certification.
    #[arg(long, global = true)]
    pub force: bool,
    /// Drop the no-arbitrage drift (falsification run).
    #[arg(long, global = true)]
    pub no_drift: bool,
    /// Where `J'` is evaluated: eq16 (bare integral) or eq34 (shifted).
    #[arg(long, global = true, value_parser = parse_convention)]
    pub drift_convention: Option<DriftConvention>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_convention(s: &str) -> Result<DriftConvention, String> {
    s.parse().map_err(|e: cdo_hjmm::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify the volatility family and the Lévy measure.
    Check,
    /// Simulate coupled surface and loss paths.
    Simulate,
    /// Martingale test plus positivity, monotonicity and price audits.
    Verify,
    /// Tabulate J, J' and J'' on a z range.
    #[command(allow_negative_numbers = true)]
    Laplace {
        #[arg(long, default_value_t = 0.0)]
        z_min: f64,
        #[arg(long, default_value_t = 5.0)]
        z_max: f64,
        #[arg(long, default_value_t = 51)]
        z_steps: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Laplace { .. } => "laplace",
        }
    }
}

/// Runs a parsed command line and returns the exit status.
pub fn run(cli: Cli) -> Exit {
    match commands::dispatch(&cli) {
        Ok(exit) => exit,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit
        }
    }
}
