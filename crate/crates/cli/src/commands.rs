//! One function per subcommand. Each returns the report it wrote.

use std::fs;
use std::path::Path;
use std::time::Instant;

use cylint_core::integrator::{
    continuity_bound, drift_integral, integral_path_simple, realize, sample_integral, verify_continuity,
    verify_isometry, verify_orthogonal_increments,
};
use cylint_core::levy::{charfn_test_vectors, sample_path_increments, verify_char_function};
use cylint_core::radonification::{verify_mixture_identity, verify_radonification_bound};
use cylint_core::spde::{
    picard_solve, solve_ensemble, verify_linear_oracle, verify_picard_euler, verify_picard_uniqueness,
};
use cylint_core::{
    CheckRecord, CylindricalCharacteristics, HVector, MCEstimate, McConfig, RngStream, SPDEConfig, Scheme, Space,
    TimeGrid, ToleranceRule,
};
use serde::Serialize;

use crate::config::{ProcessSpec, Scenario, DEFAULT_REPLICAS};
use crate::output::{self, VerificationReport, SCHEMA};
use crate::{CliError, Command, Flags};

/// Resolved run parameters.
struct Run<'a> {
    scenario: Scenario,
    mc: McConfig,
    out: &'a Path,
}

fn prepare(flags: &Flags) -> Result<Run<'_>, CliError> {
    let scenario = Scenario::load(&flags.config)?;
    let workers = match flags.workers {
        Some(0) => return Err(CliError::Config("--workers must be at least 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let mc = McConfig::new(
        flags.replicas.or(scenario.replicas).unwrap_or(DEFAULT_REPLICAS),
        flags.seed.or(scenario.seed).unwrap_or(0),
        workers,
    );
    fs::create_dir_all(&flags.out)?;
    Ok(Run {
        scenario,
        mc,
        out: &flags.out,
    })
}

/// Runs `command`, writes `report.json` and its artifacts under `--out`.
pub fn execute(command: &Command) -> Result<VerificationReport, CliError> {
    let started = Instant::now();
    let run = prepare(command.flags())?;
    let checks = match command {
        Command::Simulate(_) => simulate(&run)?,
        Command::CharfnCheck(_) => charfn_check(&run)?,
        Command::RadonifyCheck(_) => radonify_check(&run)?,
        Command::IsometryCheck(_) => isometry_check(&run)?,
        Command::SpdeSolve(_) => spde_solve(&run)?,
    };
    let mut report = VerificationReport::new(&run.scenario.name, command.name(), run.mc.seed, run.mc.replicas, checks);
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    output::write_json(&run.out.join("report.json"), &report)?;
    Ok(report)
}

fn tagged(name: &str, mut rec: CheckRecord) -> CheckRecord {
    rec.check_id = format!("{name}/{}", rec.check_id);
    rec
}

fn simulate(run: &Run) -> Result<Vec<CheckRecord>, CliError> {
    let law = run.scenario.law()?;
    let spec = run
        .scenario
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate: missing [simulate] section".into()))?;
    let count = (spec.paths as u64).min(run.mc.replicas);
    match &spec.process {
        Some(name) => {
            let process = run.scenario.process(name)?.build(&law)?;
            for r in 0..count {
                let real = realize(&process, &law, RngStream::new(run.mc.seed, r))?;
                let path = integral_path_simple(&process, &real.increments, &real.branches)?;
                let times = process.grid().times();
                output::write_increments_csv(&run.out.join(format!("increments_{r}.csv")), times, &real.increments)?;
                output::write_path_csv(&run.out.join(format!("integral_path_{r}.csv")), &path)?;
            }
        }
        None => {
            let steps = spec
                .steps
                .ok_or_else(|| CliError::Config("simulate.steps: required without simulate.process".into()))?;
            let grid = TimeGrid::uniform(spec.horizon, steps).map_err(|e| CliError::Config(format!("simulate: {e}")))?;
            for r in 0..count {
                let incs = sample_path_increments(&law, &grid, &mut RngStream::new(run.mc.seed, r).noise())?;
                output::write_increments_csv(&run.out.join(format!("increments_{r}.csv")), grid.times(), &incs)?;
            }
        }
    }
    Ok(Vec::new())
}

fn charfn_check(run: &Run) -> Result<Vec<CheckRecord>, CliError> {
    let law = run.scenario.law()?;
    let t = run.scenario.charfn.as_ref().map_or(1.0, |c| c.t);
    let probes = charfn_test_vectors(law.dim());
    Ok(verify_char_function(&law, t, &probes, run.mc)?)
}

fn radonify_check(run: &Run) -> Result<Vec<CheckRecord>, CliError> {
    let law = run.scenario.law()?;
    let (dt, probe) = run
        .scenario
        .radonify
        .as_ref()
        .map_or((1.0, None), |r| (r.dt, r.probe.clone()));
    let mut checks = Vec::new();
    for p in &run.scenario.process {
        let op = p.operator(&law)?;
        let v = match &probe {
            Some(v) if v.len() == op.rows() => HVector::new(Space::V, v.clone())?,
            Some(v) => {
                return Err(CliError::Config(format!(
                    "radonify.probe: expected {} entries for process {:?}, got {}",
                    op.rows(),
                    p.name,
                    v.len()
                )))
            }
            None => HVector::basis(Space::V, op.rows(), 0)?,
        };
        checks.push(tagged(&p.name, verify_radonification_bound(&law, &op, dt, run.mc)?));
        checks.push(tagged(&p.name, verify_mixture_identity(&law, &op, dt, &v, run.mc)?));
    }
    no_processes(&checks)?;
    Ok(checks)
}

fn no_processes(checks: &[CheckRecord]) -> Result<(), CliError> {
    if checks.is_empty() {
        Err(CliError::Config("process: at least one [[process]] is required".into()))
    } else {
        Ok(())
    }
}

fn is_drift_only(law: &CylindricalCharacteristics) -> bool {
    law.cov().hs_norm_sq() == 0.0 && law.jumps().iter().all(|j| !j.is_active())
}

fn isometry_check(run: &Run) -> Result<Vec<CheckRecord>, CliError> {
    let law = run.scenario.law()?;
    let mut checks = Vec::new();
    for p in &run.scenario.process {
        checks.extend(process_checks(p, &law, run.mc)?.into_iter().map(|c| tagged(&p.name, c)));
    }
    no_processes(&checks)?;
    Ok(checks)
}

fn process_checks(p: &ProcessSpec, law: &CylindricalCharacteristics, mc: McConfig) -> Result<Vec<CheckRecord>, CliError> {
    let process = p.build(law)?;
    let mut checks = Vec::new();
    if law.is_martingale() {
        checks.push(verify_isometry(&process, law, mc)?);
        let n = process.grid().steps();
        if n >= 2 {
            checks.push(verify_orthogonal_increments(&process, law, n / 2, mc)?);
        }
    }
    if is_drift_only(law) && process.is_deterministic() {
        // Without randomness the integral is the deterministic Bochner sum.
        let exact = drift_integral(&process, law)?;
        let sampled = sample_integral(&process, law, RngStream::new(mc.seed, 0))?;
        let err = sampled.sub(&exact)?.norm();
        checks.push(CheckRecord::new(
            "drift_integral",
            MCEstimate::exact(err),
            0.0,
            ToleranceRule::AbsDiffAtMost { tol: 1e-10 },
        ));
        let bound = continuity_bound(&process, law)?;
        checks.push(CheckRecord::new(
            "continuity_bound",
            MCEstimate::exact(sampled.norm_sq()),
            bound,
            ToleranceRule::AtMostBoundPlusStdErrors { k: 3.0 },
        ));
    } else {
        checks.push(verify_continuity(&process, law, mc)?);
    }
    Ok(checks)
}

#[derive(Serialize)]
struct PicardLog<'a> {
    schema: u32,
    beta: f64,
    iterations: usize,
    converged: bool,
    diagnostics: &'a [cylint_core::spde::PicardDiagnostic],
}

fn linear_oracle_applies(cfg: &SPDEConfig) -> bool {
    cfg.law.is_martingale() && cfg.drift.is_zero() && cfg.noise.constant_operator().is_some() && cfg.steps().is_multiple_of(4)
}

fn spde_solve(run: &Run) -> Result<Vec<CheckRecord>, CliError> {
    let law = run.scenario.law()?;
    let spec = run
        .scenario
        .spde
        .as_ref()
        .ok_or_else(|| CliError::Config("spde: missing [spde] section".into()))?;
    let cfg = spec.build(&law)?;
    let mut checks = Vec::new();
    let solution = match cfg.scheme {
        Scheme::ExpEuler => solve_ensemble(&cfg, run.mc, spec.keep_paths)?,
        Scheme::Picard(_) => {
            let out = picard_solve(&cfg, run.mc, spec.keep_paths)?;
            let log = PicardLog {
                schema: SCHEMA,
                beta: out.beta,
                iterations: out.iterations,
                converged: out.converged,
                diagnostics: &out.iterates,
            };
            output::write_json(&run.out.join("picard.json"), &log)?;
            let worst = out.iterates.iter().filter_map(|d| d.ratio).fold(0.0, f64::max);
            checks.push(CheckRecord::new(
                "picard_contraction_ratio",
                MCEstimate::exact(worst),
                1.0,
                ToleranceRule::StrictlyBelow { k: 0.0 },
            ));
            checks.push(verify_picard_euler(&cfg, run.mc)?);
            checks.push(verify_picard_uniqueness(&cfg, run.mc)?);
            out.solution
        }
    };
    output::write_moments_csv(&run.out.join("moments.csv"), &solution.times, &solution.mean_sq)?;
    for (r, path) in solution.paths.iter().enumerate() {
        output::write_path_csv(&run.out.join(format!("path_{r}.csv")), path)?;
    }
    checks.push(CheckRecord::new(
        "sup_second_moment_finite",
        MCEstimate::exact(solution.sup_mean_sq()),
        f64::MAX,
        ToleranceRule::AtMostBoundPlusStdErrors { k: 0.0 },
    ));
    if linear_oracle_applies(&cfg) {
        checks.push(verify_linear_oracle(&cfg, run.mc)?);
    }
    Ok(checks)
}
