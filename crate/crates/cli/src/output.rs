//! Report and time-series writers. Every file carries schema version 1.

use std::fs;
use std::path::Path;

use cylint_core::{CheckRecord, IncrementSample, MCEstimate, PathSample};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema: u32,
    pub scenario: String,
    pub command: String,
    pub seed: u64,
    pub replicas: u64,
    pub pass: bool,
    pub checks: Vec<CheckRecord>,
    pub wall_clock_seconds: f64,
}

impl VerificationReport {
    pub fn new(scenario: &str, command: &str, seed: u64, replicas: u64, checks: Vec<CheckRecord>) -> Self {
        Self {
            schema: SCHEMA,
            scenario: scenario.to_string(),
            command: command.to_string(),
            seed,
            replicas,
            pass: checks.iter().all(|c| c.pass),
            checks,
            wall_clock_seconds: 0.0,
        }
    }

    /// Whether every stored pass flag agrees with its tolerance rule.
    pub fn is_consistent(&self) -> bool {
        self.checks.iter().all(|c| c.recheck() == c.pass) && self.pass == self.checks.iter().all(|c| c.pass)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn header(prefix: &[&str], dim: usize) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((1..=dim).map(|k| format!("coord_{k}")))
        .collect()
}

/// `t,coord_1,...,coord_N` per grid time.
pub fn write_path_csv(path: &Path, sample: &PathSample) -> Result<(), CliError> {
    let dim = sample.values.first().map_or(0, |v| v.dim());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(&["t"], dim))?;
    for (t, v) in sample.times.iter().zip(&sample.values) {
        w.write_record(std::iter::once(t.to_string()).chain(v.coords().iter().map(f64::to_string)))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per increment: interval end points and coordinates.
pub fn write_increments_csv(path: &Path, times: &[f64], increments: &[IncrementSample]) -> Result<(), CliError> {
    let dim = increments.first().map_or(0, |i| i.coords.dim());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(&["t_start", "t_end"], dim))?;
    for (k, inc) in increments.iter().enumerate() {
        let row = [times[k].to_string(), times[k + 1].to_string()]
            .into_iter()
            .chain(inc.coords.coords().iter().map(f64::to_string));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,mean_sq,std_error` per grid time.
pub fn write_moments_csv(path: &Path, times: &[f64], moments: &[MCEstimate]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "mean_sq", "std_error"])?;
    for (t, m) in times.iter().zip(moments) {
        w.write_record([t.to_string(), m.mean.to_string(), m.std_error.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
