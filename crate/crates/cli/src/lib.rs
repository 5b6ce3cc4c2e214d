//! Batch driver for scenario files: parses a scenario, fans out the Monte
//! Carlo replicas and writes JSON reports and CSV time series.
//!
//! Exit status is 0 when every check passes, 1 when some check fails and 2
//! when the scenario, the flags or the run itself is invalid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

pub use config::Scenario;
pub use output::VerificationReport;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cylint_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(
    name = "cylint",
    version,
    about = "Monte Carlo verification of stochastic integrals driven by cylindrical Levy noise"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Dump increment and integral paths as CSV.
    Simulate(Flags),
    /// Empirical against analytic characteristic function.
    CharfnCheck(Flags),
    /// Radonification bound and conditioning identity.
    RadonifyCheck(Flags),
    /// Ito isometry, continuity bound and orthogonal increments.
    IsometryCheck(Flags),
    /// Solve the SPDE section and run its oracle checks.
    SpdeSolve(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::CharfnCheck(_) => "charfn-check",
            Command::RadonifyCheck(_) => "radonify-check",
            Command::IsometryCheck(_) => "isometry-check",
            Command::SpdeSolve(_) => "spde-solve",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Simulate(f)
            | Command::CharfnCheck(f)
            | Command::RadonifyCheck(f)
            | Command::IsometryCheck(f)
            | Command::SpdeSolve(f) => f,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Eq, Args)]
pub struct Flags {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the scenario's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replica count; overrides the scenario's `replicas`.
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, env = "CYLINT_WORKERS")]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Runs one command and maps the outcome to the exit status, printing a line
/// per check to stdout and failures to stderr.
pub fn run(command: &Command) -> ExitCode {
    match commands::execute(command) {
        Ok(report) => {
            for c in &report.checks {
                println!(
                    "{} {} lhs={} se={} rhs={}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.check_id,
                    c.lhs_mean,
                    c.lhs_se,
                    c.rhs
                );
            }
            if report.pass {
                ExitCode::SUCCESS
            } else {
                for c in report.checks.iter().filter(|c| !c.pass) {
                    eprintln!("check failed: {c:?}");
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("cylint {}: {e}", command.name());
            ExitCode::from(2)
        }
    }
}
