//! Mild solutions of `dX = (AX + F(X)) dt + G(X) dL` for a diagonal
//! generator `A`.
//!
//! Two discretizations share one grid and one noise realization per replica:
//! the exponential Euler march `X_{n+1} = S(dt)(X_n + F(X_n) dt + G(X_n) delta_n)`
//! and Picard iteration of `K = K_1 + K_2` with left-point quadrature. On a
//! uniform grid the fixed point of the discrete Picard map is exactly the
//! exponential Euler path.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cylindrical::CylindricalCharacteristics;
use crate::error::{check_shape, Error, Result};
use crate::hilbert::{HSOperator, HVector, Space};
use crate::integrator::PathSample;
use crate::levy::{coarsen, sample_path_increments, IncrementSample, RngStream, TimeGrid};
use crate::mc::{collect, fanout_vec, MCEstimate, McConfig};
use crate::radonification::radonify;
use crate::report::{CheckRecord, ToleranceRule};

/// `S(t) = diag(exp(a_k t))` with every `a_k <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupSpec {
    eigenvalues: Vec<f64>,
}

impl SemigroupSpec {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidInput("semigroup needs at least one mode".into()));
        }
        if let Some((k, a)) = eigenvalues
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a <= 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "eigenvalue {k} is {a}; a contraction semigroup needs finite a_k <= 0"
            )));
        }
        Ok(Self { eigenvalues })
    }

    /// Dirichlet heat equation on `[0, pi]`: `a_k = -k^2`.
    pub fn heat(n: usize) -> Self {
        Self {
            eigenvalues: (1..=n).map(|k| -((k * k) as f64)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Multipliers `exp(a_k t)`.
    pub fn factors(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidInput(format!("semigroup time must be >= 0, got {t}")));
        }
        Ok(self.eigenvalues.iter().map(|a| (a * t).exp()).collect())
    }

    pub fn apply(&self, t: f64, v: &HVector) -> Result<HVector> {
        check_shape("semigroup dimension", self.dim(), v.dim())?;
        let f = self.factors(t)?;
        Ok(HVector::from_raw(
            v.space(),
            v.coords().iter().zip(&f).map(|(x, e)| x * e).collect(),
        ))
    }
}

/// Drift `F: V -> V` with a global Lipschitz constant.
pub trait DriftMap: Send + Sync + fmt::Debug {
    fn apply(&self, v: &HVector) -> Result<HVector>;
    fn lipschitz(&self) -> f64;
    fn is_zero(&self) -> bool {
        false
    }
}

/// Noise coefficient `G: V -> L_2(U, V)`, Lipschitz in the HS norm.
pub trait NoiseMap: Send + Sync + fmt::Debug {
    fn apply(&self, v: &HVector) -> Result<HSOperator>;
    fn lipschitz(&self) -> f64;
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `G(v)` applied to one increment.
    fn apply_increment(&self, v: &HVector, inc: &IncrementSample) -> Result<HVector> {
        radonify(&self.apply(v)?, inc)
    }

    /// The operator when `G` does not depend on the state.
    fn constant_operator(&self) -> Option<&HSOperator> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriftFixture {
    Zero,
    /// `F(v) = c v`
    Linear { c: f64 },
    /// `F(v)_k = c sin(v_k)`
    Sine { c: f64 },
}

impl DriftMap for DriftFixture {
    fn apply(&self, v: &HVector) -> Result<HVector> {
        Ok(match *self {
            DriftFixture::Zero => HVector::zeros(v.space(), v.dim()),
            DriftFixture::Linear { c } => v.scaled(c),
            DriftFixture::Sine { c } => {
                HVector::from_raw(v.space(), v.coords().iter().map(|x| c * x.sin()).collect())
            }
        })
    }

    fn lipschitz(&self) -> f64 {
        match *self {
            DriftFixture::Zero => 0.0,
            DriftFixture::Linear { c } | DriftFixture::Sine { c } => c.abs(),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, DriftFixture::Zero)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseFixture {
    Zero { rows: usize, cols: usize },
    /// `G(v) = phi`
    Constant(HSOperator),
    /// `G(v) = phi / (1 + ||v||)`
    Damped(HSOperator),
}

impl NoiseMap for NoiseFixture {
    fn apply(&self, v: &HVector) -> Result<HSOperator> {
        Ok(match self {
            NoiseFixture::Zero { rows, cols } => HSOperator::zeros(*rows, *cols),
            NoiseFixture::Constant(phi) => phi.clone(),
            NoiseFixture::Damped(phi) => phi.scaled(1.0 / (1.0 + v.norm())),
        })
    }

    fn lipschitz(&self) -> f64 {
        match self {
            NoiseFixture::Zero { .. } | NoiseFixture::Constant(_) => 0.0,
            NoiseFixture::Damped(phi) => phi.hs_norm(),
        }
    }

    fn rows(&self) -> usize {
        match self {
            NoiseFixture::Zero { rows, .. } => *rows,
            NoiseFixture::Constant(phi) | NoiseFixture::Damped(phi) => phi.rows(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            NoiseFixture::Zero { cols, .. } => *cols,
            NoiseFixture::Constant(phi) | NoiseFixture::Damped(phi) => phi.cols(),
        }
    }

    fn apply_increment(&self, v: &HVector, inc: &IncrementSample) -> Result<HVector> {
        match self {
            NoiseFixture::Zero { rows, .. } => Ok(HVector::zeros(Space::V, *rows)),
            NoiseFixture::Constant(phi) => radonify(phi, inc),
            NoiseFixture::Damped(phi) => Ok(radonify(phi, inc)?.scaled(1.0 / (1.0 + v.norm()))),
        }
    }

    fn constant_operator(&self) -> Option<&HSOperator> {
        match self {
            NoiseFixture::Constant(phi) => Some(phi),
            _ => None,
        }
    }
}

/// Starting point of the Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialIterate {
    #[default]
    Zero,
    /// `Y_0(t) = S(t) X_0`, the unforced orbit.
    Orbit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    /// Weight in `||.||_{T, beta}`; `None` selects [`SPDEConfig::default_beta`].
    pub beta: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub initial: InitialIterate,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            beta: None,
            max_iter: 60,
            tol: 1e-6,
            initial: InitialIterate::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    ExpEuler,
    Picard(PicardOptions),
}

const PROBE_PAIRS: usize = 64;

#[derive(Clone)]
pub struct SPDEConfig {
    pub semigroup: SemigroupSpec,
    pub drift: Arc<dyn DriftMap>,
    pub noise: Arc<dyn NoiseMap>,
    pub x0: HVector,
    pub horizon: f64,
    pub dt: f64,
    pub law: CylindricalCharacteristics,
    pub scheme: Scheme,
}

impl fmt::Debug for SPDEConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SPDEConfig")
            .field("semigroup", &self.semigroup)
            .field("drift", &self.drift)
            .field("noise", &self.noise)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .field("dt", &self.dt)
            .field("scheme", &self.scheme)
            .finish_non_exhaustive()
    }
}

impl SPDEConfig {
    /// Validates shapes, the grid and the declared Lipschitz constants.
    pub fn new(
        semigroup: SemigroupSpec,
        drift: Arc<dyn DriftMap>,
        noise: Arc<dyn NoiseMap>,
        x0: HVector,
        horizon: f64,
        dt: f64,
        law: CylindricalCharacteristics,
    ) -> Result<Self> {
        let n = semigroup.dim();
        check_shape("initial state dimension", n, x0.dim())?;
        check_shape("noise coefficient rows", n, noise.rows())?;
        check_shape("noise coefficient cols", law.dim(), noise.cols())?;
        if !(horizon > 0.0 && horizon.is_finite() && dt > 0.0 && dt <= horizon) {
            return Err(Error::InvalidInput(format!(
                "need 0 < dt <= T, got dt = {dt}, T = {horizon}"
            )));
        }
        let steps = horizon / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidInput(format!("dt = {dt} does not divide T = {horizon}")));
        }
        let cfg = Self {
            semigroup,
            drift,
            noise,
            x0: HVector::from_raw(Space::V, x0.into_coords()),
            horizon,
            dt,
            law,
            scheme: Scheme::ExpEuler,
        };
        cfg.probe_lipschitz()?;
        Ok(cfg)
    }

    pub fn with_scheme(self, scheme: Scheme) -> Self {
        Self { scheme, ..self }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::uniform(self.horizon, self.steps()).expect("validated at construction")
    }

    /// `8 max(L_F^2, L_G^2 ||L(1)||^2) max(1, T)`, floored at 1.
    pub fn default_beta(&self) -> Result<f64> {
        let lf = self.drift.lipschitz();
        let lg = self.noise.lipschitz();
        let c = (lf * lf).max(lg * lg * self.law.operator_norm_sq(1.0)?);
        Ok((8.0 * c * self.horizon.max(1.0)).max(1.0))
    }

    /// Checks both Lipschitz bounds on random pairs at several scales.
    fn probe_lipschitz(&self) -> Result<()> {
        let n = self.semigroup.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let (lf, lg) = (self.drift.lipschitz(), self.noise.lipschitz());
        for i in 0..PROBE_PAIRS {
            let scale = 10f64.powi(i as i32 % 5 - 2);
            let mut draw = || {
                let c: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                HVector::from_raw(Space::V, c)
            };
            let (v1, v2) = (draw(), draw());
            let dist = v1.sub(&v2)?.norm();
            let df = self.drift.apply(&v1)?.sub(&self.drift.apply(&v2)?)?.norm();
            let dg = self
                .noise
                .apply(&v1)?
                .lin_comb(1.0, &self.noise.apply(&v2)?, -1.0)?
                .hs_norm();
            for (what, d, l) in [("drift", df, lf), ("noise coefficient", dg, lg)] {
                if d > l * dist * (1.0 + 1e-9) + 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "{what} violates its Lipschitz constant {l}: moved {d} over distance {dist}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn martingale_law(&self) -> Result<()> {
        if self.law.is_martingale() {
            Ok(())
        } else {
            Err(Error::InvalidInput("this oracle needs driftless noise".into()))
        }
    }
}

/// Per-replica paths and the moment profile of an ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSolution {
    pub times: Vec<f64>,
    /// `E||X(t)||^2` per grid time.
    pub mean_sq: Vec<MCEstimate>,
    /// Paths of the first replicas, if requested.
    pub paths: Vec<PathSample>,
}

impl EnsembleSolution {
    pub fn sup_mean_sq(&self) -> f64 {
        self.mean_sq.iter().map(|e| e.mean).fold(0.0, f64::max)
    }

    pub fn terminal(&self) -> MCEstimate {
        *self.mean_sq.last().expect("grid has at least two times")
    }
}

/// `||Y||_{T, beta} = (max_t exp(-beta t) E||Y(t)||^2)^{1/2}` over the grid.
pub fn tb_norm(y: &EnsembleSolution, beta: f64) -> Result<f64> {
    weighted_sup(&y.times, y.mean_sq.iter().map(|e| e.mean), beta)
}

fn weighted_sup(times: &[f64], means: impl Iterator<Item = f64>, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    Ok(times
        .iter()
        .zip(means)
        .map(|(t, m)| (-beta * t).exp() * m)
        .fold(0.0, f64::max)
        .sqrt())
}

/// `S(dt)(base + F(at) dt + G(at) delta)`.
fn step(
    cfg: &SPDEConfig,
    decay: &[f64],
    dt: f64,
    base: &HVector,
    at: &HVector,
    inc: &IncrementSample,
) -> Result<HVector> {
    let f = cfg.drift.apply(at)?;
    let g = cfg.noise.apply_increment(at, inc)?;
    let coords = (0..decay.len())
        .map(|k| decay[k] * (base.coords()[k] + dt * f.coords()[k] + g.coords()[k]))
        .collect();
    Ok(HVector::from_raw(Space::V, coords))
}

fn blow_up(k: usize, x: &HVector) -> Result<()> {
    if x.coords().iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("state became non-finite at step {k}")))
    }
}

/// Exponential Euler states on a uniform grid driven by `increments`.
pub fn exp_euler_states(cfg: &SPDEConfig, increments: &[IncrementSample]) -> Result<Vec<HVector>> {
    let dt = increments.first().map_or(cfg.dt, |i| i.dt);
    let decay = cfg.semigroup.factors(dt)?;
    let mut states = Vec::with_capacity(increments.len() + 1);
    states.push(cfg.x0.clone());
    for (k, inc) in increments.iter().enumerate() {
        let x = &states[k];
        let next = step(cfg, &decay, dt, x, x, inc)?;
        blow_up(k + 1, &next)?;
        states.push(next);
    }
    Ok(states)
}

/// One exponential Euler path with noise drawn from `rng`.
pub fn solve_exp_euler<R: Rng + ?Sized>(cfg: &SPDEConfig, rng: &mut R) -> Result<PathSample> {
    let grid = cfg.grid();
    let incs = sample_path_increments(&cfg.law, &grid, rng)?;
    Ok(PathSample {
        times: grid.times().to_vec(),
        values: exp_euler_states(cfg, &incs)?,
    })
}

fn replica_increments(cfg: &SPDEConfig, grid: &TimeGrid, seed: u64, r: u64) -> Result<Vec<IncrementSample>> {
    sample_path_increments(&cfg.law, grid, &mut RngStream::new(seed, r).noise())
}

fn ensemble(
    cfg: &SPDEConfig,
    mc: McConfig,
    keep_paths: usize,
    states: impl Fn(&[IncrementSample]) -> Result<Vec<HVector>> + Sync,
) -> Result<EnsembleSolution> {
    let grid = cfg.grid();
    let times = grid.times().to_vec();
    let mean_sq = fanout_vec(mc.replicas, mc.workers, times.len(), |r| {
        let incs = replica_increments(cfg, &grid, mc.seed, r)?;
        Ok(states(&incs)?.iter().map(HVector::norm_sq).collect())
    })?;
    let kept = (keep_paths as u64).min(mc.replicas);
    let paths = collect(kept, mc.workers, |r| {
        let incs = replica_increments(cfg, &grid, mc.seed, r)?;
        Ok(PathSample {
            times: times.clone(),
            values: states(&incs)?,
        })
    })?;
    Ok(EnsembleSolution { times, mean_sq, paths })
}

/// Exponential Euler over `mc.replicas` independent noise paths.
pub fn solve_ensemble(cfg: &SPDEConfig, mc: McConfig, keep_paths: usize) -> Result<EnsembleSolution> {
    ensemble(cfg, mc, keep_paths, |incs| exp_euler_states(cfg, incs))
}

fn initial_iterate(cfg: &SPDEConfig, times: &[f64], initial: InitialIterate) -> Result<Vec<HVector>> {
    match initial {
        InitialIterate::Zero => Ok(vec![HVector::zeros(Space::V, cfg.semigroup.dim()); times.len()]),
        InitialIterate::Orbit => {
            // The discrete orbit `S(dt)^j X_0`, so that the unforced scheme
            // reproduces it bit for bit.
            let decay = cfg.semigroup.factors(cfg.dt)?;
            let mut orbit = vec![cfg.x0.clone()];
            for _ in 1..times.len() {
                let last = orbit.last().expect("non-empty").coords();
                let next = last.iter().zip(&decay).map(|(x, e)| x * e).collect();
                orbit.push(HVector::from_raw(Space::V, next));
            }
            Ok(orbit)
        }
    }
}

/// `Y_{n+1} = S(.) X_0 + K_1(Y_n) + K_2(Y_n)` on the grid, by the recursion
/// `Z_j = S(dt)(Z_{j-1} + F(Y_n(t_{j-1})) dt + G(Y_n(t_{j-1})) delta_{j-1})`.
fn picard_map(cfg: &SPDEConfig, decay: &[f64], incs: &[IncrementSample], prev: &[HVector]) -> Result<Vec<HVector>> {
    let mut next = Vec::with_capacity(prev.len());
    next.push(cfg.x0.clone());
    for (k, inc) in incs.iter().enumerate() {
        let z = step(cfg, decay, inc.dt, &next[k], &prev[k], inc)?;
        blow_up(k + 1, &z)?;
        next.push(z);
    }
    Ok(next)
}

fn picard_iterate(
    cfg: &SPDEConfig,
    incs: &[IncrementSample],
    times: &[f64],
    initial: InitialIterate,
    iterations: usize,
) -> Result<Vec<HVector>> {
    let decay = cfg.semigroup.factors(cfg.dt)?;
    let mut y = initial_iterate(cfg, times, initial)?;
    for _ in 0..iterations {
        let next = picard_map(cfg, &decay, incs, &y)?;
        if next == y {
            break;
        }
        y = next;
    }
    Ok(y)
}

/// One row of the Picard convergence log.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PicardDiagnostic {
    pub iteration: usize,
    /// `||Y_n - Y_{n-1}||_{T, beta}`
    pub tb_diff: f64,
    /// `tb_diff_n / tb_diff_{n-1}`; absent for the first iteration.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub solution: EnsembleSolution,
    pub iterates: Vec<PicardDiagnostic>,
    pub beta: f64,
    /// Index `n` of the returned iterate `Y_n`.
    pub iterations: usize,
    pub converged: bool,
}

fn picard_options(cfg: &SPDEConfig) -> PicardOptions {
    match cfg.scheme {
        Scheme::Picard(opts) => opts,
        Scheme::ExpEuler => PicardOptions::default(),
    }
}

/// Ensemble convergence log and the stopping iteration.
fn picard_schedule(
    cfg: &SPDEConfig,
    opts: PicardOptions,
    beta: f64,
    mc: McConfig,
) -> Result<(Vec<PicardDiagnostic>, usize, bool)> {
    if opts.max_iter == 0 || opts.tol.is_nan() || opts.tol < 0.0 {
        return Err(Error::InvalidInput("Picard needs max_iter >= 1 and tol >= 0".into()));
    }
    let grid = cfg.grid();
    let times = grid.times();
    let width = times.len();
    let decay = cfg.semigroup.factors(cfg.dt)?;
    // Row n of the replica output holds |Y_{n+1}(t) - Y_n(t)|^2 over the grid.
    let diffs = fanout_vec(mc.replicas, mc.workers, opts.max_iter * width, |r| {
        let incs = replica_increments(cfg, &grid, mc.seed, r)?;
        let mut y = initial_iterate(cfg, times, opts.initial)?;
        let mut out = vec![0.0; opts.max_iter * width];
        for row in out.chunks_mut(width) {
            let next = picard_map(cfg, &decay, &incs, &y)?;
            if next == y {
                // Every later iterate is identical.
                break;
            }
            for ((o, a), b) in row.iter_mut().zip(&next).zip(&y) {
                *o = a.sub(b)?.norm_sq();
            }
            y = next;
        }
        Ok(out)
    })?;

    let mut log: Vec<PicardDiagnostic> = Vec::new();
    let mut expanding = 0;
    for (n, row) in diffs.chunks(width).enumerate() {
        let tb_diff = weighted_sup(times, row.iter().map(|e| e.mean), beta)?;
        let ratio = log.last().map(|p| if p.tb_diff > 0.0 { tb_diff / p.tb_diff } else { 0.0 });
        log.push(PicardDiagnostic {
            iteration: n + 1,
            tb_diff,
            ratio,
        });
        if tb_diff <= opts.tol {
            return Ok((log, n + 1, true));
        }
        expanding = if ratio.is_some_and(|q| q >= 1.0) { expanding + 1 } else { 0 };
        if expanding >= 3 {
            return Err(Error::Numeric(format!(
                "Picard iteration is not contracting in the (T, beta) norm with beta = {beta}: \
                 the difference ratio was >= 1 for 3 consecutive iterations (last {tb_diff}); \
                 try a larger beta"
            )));
        }
    }
    Ok((log, opts.max_iter, false))
}

/// Picard iteration on shared noise per replica, ensemble-averaged.
///
/// Options come from `cfg.scheme`; the defaults apply for `ExpEuler`.
pub fn picard_solve(cfg: &SPDEConfig, mc: McConfig, keep_paths: usize) -> Result<PicardOutcome> {
    let opts = picard_options(cfg);
    let beta = match opts.beta {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(Error::InvalidInput(format!("beta must be positive, got {b}"))),
        None => cfg.default_beta()?,
    };
    let (iterates, iterations, converged) = picard_schedule(cfg, opts, beta, mc)?;
    let times = cfg.grid().times().to_vec();
    let solution = ensemble(cfg, mc, keep_paths, |incs| {
        picard_iterate(cfg, incs, &times, opts.initial, iterations)
    })?;
    Ok(PicardOutcome {
        solution,
        iterates,
        beta,
        iterations,
        converged,
    })
}

/// Dispatches on `cfg.scheme`; the Picard log is empty for exponential Euler.
pub fn solve(cfg: &SPDEConfig, mc: McConfig, keep_paths: usize) -> Result<(EnsembleSolution, Vec<PicardDiagnostic>)> {
    match cfg.scheme {
        Scheme::ExpEuler => Ok((solve_ensemble(cfg, mc, keep_paths)?, Vec::new())),
        Scheme::Picard(_) => {
            let out = picard_solve(cfg, mc, keep_paths)?;
            Ok((out.solution, out.iterates))
        }
    }
}

/// `w_j = (phi (Q + diag(lambda m2)) phi^T)_{jj}`, the noise intensity of mode `j`.
pub fn mode_intensities(phi: &HSOperator, law: &CylindricalCharacteristics) -> Result<Vec<f64>> {
    check_shape("noise coefficient cols", law.dim(), phi.cols())?;
    let c = phi.compose(&law.total_cov())?.compose(&phi.adjoint())?;
    Ok((0..phi.rows()).map(|j| c.entry(j, j)).collect())
}

/// `E||X(t)||^2` for `F = 0`, `G = phi` and martingale noise: the semigroup
/// orbit plus independent Ornstein-Uhlenbeck modes,
/// `sum_j w_j (1 - exp(2 a_j t)) / (-2 a_j)`.
pub fn ou_second_moment(
    semigroup: &SemigroupSpec,
    phi: &HSOperator,
    law: &CylindricalCharacteristics,
    x0: &HVector,
    t: f64,
) -> Result<f64> {
    let w = mode_intensities(phi, law)?;
    check_shape("semigroup dimension", semigroup.dim(), w.len())?;
    let orbit = semigroup.apply(t, x0)?.norm_sq();
    let noise: f64 = w
        .iter()
        .zip(semigroup.eigenvalues())
        .map(|(w, &a)| if a == 0.0 { w * t } else { w * (-(2.0 * a * t).exp_m1()) / (-2.0 * a) })
        .sum();
    Ok(orbit + noise)
}

/// Leading-order discretization bias of the finest of three means taken at
/// step sizes `4h, 2h, h`: `(m_2h - m_h) / (2^p - 1)` with the order `p`
/// fitted from the three levels and clamped to `[0.5, 2]`.
pub fn richardson_bias(means: [f64; 3]) -> f64 {
    let [m4, m2, m1] = means;
    let (d_coarse, d_fine) = (m4 - m2, m2 - m1);
    let p = if d_fine != 0.0 && d_coarse / d_fine > 0.0 {
        (d_coarse / d_fine).log2().clamp(0.5, 2.0)
    } else {
        1.0
    };
    (m2 - m1) / (2f64.powf(p) - 1.0)
}

/// `E||X(T)||^2` from exponential Euler at `dt`, `2 dt` and `4 dt` on shared
/// noise, coarsest first.
pub fn terminal_moments_by_level(cfg: &SPDEConfig, mc: McConfig) -> Result<[MCEstimate; 3]> {
    let grid = cfg.grid();
    if !grid.steps().is_multiple_of(4) {
        return Err(Error::InvalidInput(
            "the step count must be divisible by 4 for the three-level estimate".into(),
        ));
    }
    let est = fanout_vec(mc.replicas, mc.workers, 3, |r| {
        let fine = replica_increments(cfg, &grid, mc.seed, r)?;
        [4, 2, 1]
            .iter()
            .map(|&f| {
                let incs = coarsen(&fine, f)?;
                Ok(exp_euler_states(cfg, &incs)?.last().expect("non-empty").norm_sq())
            })
            .collect()
    })?;
    Ok([est[0], est[1], est[2]])
}

/// Linear oracle: `F = 0`, constant `G`, martingale noise. Passes when the
/// finest `E||X(T)||^2` lies within three standard errors plus the Richardson
/// bias estimate of [`ou_second_moment`].
pub fn verify_linear_oracle(cfg: &SPDEConfig, mc: McConfig) -> Result<CheckRecord> {
    cfg.martingale_law()?;
    if !cfg.drift.is_zero() {
        return Err(Error::InvalidInput("the linear oracle needs F = 0".into()));
    }
    let phi = cfg
        .noise
        .constant_operator()
        .ok_or_else(|| Error::InvalidInput("the linear oracle needs a constant G".into()))?;
    let rhs = ou_second_moment(&cfg.semigroup, phi, &cfg.law, &cfg.x0, cfg.horizon)?;
    let levels = terminal_moments_by_level(cfg, mc)?;
    let slack = richardson_bias([levels[0].mean, levels[1].mean, levels[2].mean]).abs();
    Ok(CheckRecord::new(
        "spde_linear_oracle",
        levels[2],
        rhs,
        ToleranceRule::WithinStdErrorsPlusBias { k: 3.0, slack },
    ))
}

/// Picard limit against exponential Euler on the same noise, at `T`.
pub fn verify_picard_euler(cfg: &SPDEConfig, mc: McConfig) -> Result<CheckRecord> {
    let picard = picard_solve(cfg, mc, 0)?.solution.terminal();
    let euler = solve_ensemble(cfg, mc, 0)?.terminal();
    Ok(CheckRecord::with_rhs_se(
        "picard_matches_exp_euler",
        picard,
        euler.mean,
        euler.std_error,
        ToleranceRule::WithinCombinedStdErrors { k: 3.0 },
    ))
}

/// `||Y^0 - Y^orbit||_{T, beta}` between the Picard limits started from zero
/// and from the semigroup orbit, against the iteration tolerance.
pub fn verify_picard_uniqueness(cfg: &SPDEConfig, mc: McConfig) -> Result<CheckRecord> {
    let opts = picard_options(cfg);
    let beta = opts.beta.map_or_else(|| cfg.default_beta(), Ok)?;
    let from = |initial| -> Result<usize> {
        let o = PicardOptions { initial, ..opts };
        Ok(picard_schedule(cfg, o, beta, mc)?.1)
    };
    let (n_zero, n_orbit) = (from(InitialIterate::Zero)?, from(InitialIterate::Orbit)?);
    let grid = cfg.grid();
    let times = grid.times();
    let diff = fanout_vec(mc.replicas, mc.workers, times.len(), |r| {
        let incs = replica_increments(cfg, &grid, mc.seed, r)?;
        let a = picard_iterate(cfg, &incs, times, InitialIterate::Zero, n_zero)?;
        let b = picard_iterate(cfg, &incs, times, InitialIterate::Orbit, n_orbit)?;
        a.iter().zip(&b).map(|(x, y)| Ok(x.sub(y)?.norm_sq())).collect()
    })?;
    let dist = weighted_sup(times, diff.iter().map(|e| e.mean), beta)?;
    Ok(CheckRecord::new(
        "picard_uniqueness",
        MCEstimate {
            mean: dist,
            std_error: 0.0,
            replicas: mc.replicas,
        },
        0.0,
        ToleranceRule::AbsDiffAtMost { tol: opts.tol },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{isometry_rhs, SimpleProcess};
    use crate::cylindrical::JumpComponent;
    use approx::assert_relative_eq;

    fn cfg(
        semigroup: SemigroupSpec,
        drift: DriftFixture,
        noise: NoiseFixture,
        x0: Vec<f64>,
        dt: f64,
        law: CylindricalCharacteristics,
    ) -> SPDEConfig {
        SPDEConfig::new(semigroup, Arc::new(drift), Arc::new(noise), HVector::in_v(x0).unwrap(), 1.0, dt, law).unwrap()
    }

    fn mc(replicas: u64) -> McConfig {
        McConfig::new(replicas, 2024, 4)
    }

    #[test]
    fn semigroup_examples() {
        let s = SemigroupSpec::new(vec![-1.0, -4.0]).unwrap();
        let v = HVector::in_v(vec![0.3, -2.0]).unwrap();
        assert_eq!(s.apply(0.0, &v).unwrap(), v);
        let e1 = HVector::basis(Space::V, 2, 0).unwrap();
        assert_relative_eq!(s.apply(1.0, &e1).unwrap().coords()[0], 0.36787944117144233, max_relative = 1e-15);
        let st = s.apply(0.3, &s.apply(0.45, &v).unwrap()).unwrap();
        let direct = s.apply(0.75, &v).unwrap();
        for (a, b) in st.coords().iter().zip(direct.coords()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert!(s.apply(-0.1, &v).is_err());
        assert!(SemigroupSpec::new(vec![0.5]).is_err());
        assert!(s.apply(2.0, &v).unwrap().norm() <= v.norm());
        assert_eq!(SemigroupSpec::heat(3).eigenvalues(), &[-1.0, -4.0, -9.0]);
    }

    #[test]
    fn lipschitz_probes_reject_false_constants() {
        #[derive(Debug)]
        struct Cubic;
        impl DriftMap for Cubic {
            fn apply(&self, v: &HVector) -> Result<HVector> {
                Ok(HVector::from_raw(Space::V, v.coords().iter().map(|x| x * x * x).collect()))
            }
            fn lipschitz(&self) -> f64 {
                1.0
            }
        }
        let law = CylindricalCharacteristics::standard_gaussian(2);
        let res = SPDEConfig::new(
            SemigroupSpec::heat(2),
            Arc::new(Cubic),
            Arc::new(NoiseFixture::Zero { rows: 2, cols: 2 }),
            HVector::zeros(Space::V, 2),
            1.0,
            0.1,
            law.clone(),
        );
        assert!(res.is_err());
        let bad_dt = SPDEConfig::new(
            SemigroupSpec::heat(2),
            Arc::new(DriftFixture::Zero),
            Arc::new(NoiseFixture::Zero { rows: 2, cols: 2 }),
            HVector::zeros(Space::V, 2),
            1.0,
            0.3,
            law,
        );
        assert!(bad_dt.is_err());
    }

    #[test]
    fn deterministic_flow_is_the_semigroup_orbit() {
        let c = cfg(
            SemigroupSpec::new(vec![-1.0, -2.0]).unwrap(),
            DriftFixture::Zero,
            NoiseFixture::Zero { rows: 2, cols: 2 },
            vec![1.0, 0.0],
            1.0 / 64.0,
            CylindricalCharacteristics::standard_gaussian(2),
        );
        let path = solve_exp_euler(&c, &mut RngStream::new(0, 0).noise()).unwrap();
        assert_relative_eq!(path.last().unwrap().coords()[0], (-1f64).exp(), max_relative = 1e-13);
        for (t, x) in path.times.iter().zip(&path.values) {
            let orbit = c.semigroup.apply(*t, &c.x0).unwrap();
            assert_relative_eq!(x.coords()[0], orbit.coords()[0], max_relative = 1e-13);
        }
    }

    #[test]
    fn linear_ode_is_first_order() {
        let x0 = 1.0;
        let mut errors = Vec::new();
        for steps in [32, 64, 128] {
            let c = cfg(
                SemigroupSpec::new(vec![-1.0]).unwrap(),
                DriftFixture::Linear { c: -1.0 },
                NoiseFixture::Zero { rows: 1, cols: 1 },
                vec![x0],
                1.0 / steps as f64,
                CylindricalCharacteristics::zero(1),
            );
            let path = solve_exp_euler(&c, &mut RngStream::new(0, 0).noise()).unwrap();
            errors.push((path.last().unwrap().coords()[0] - (-2f64).exp() * x0).abs());
        }
        assert!(errors[0] < 0.01);
        for w in errors.windows(2) {
            assert!((1.8..2.2).contains(&(w[0] / w[1])), "{errors:?}");
        }
    }

    #[test]
    fn blow_up_reports_the_step() {
        #[derive(Debug)]
        struct Explode;
        impl NoiseMap for Explode {
            fn apply(&self, _: &HVector) -> Result<HSOperator> {
                Ok(HSOperator::zeros(1, 1))
            }
            fn lipschitz(&self) -> f64 {
                0.0
            }
            fn rows(&self) -> usize {
                1
            }
            fn cols(&self) -> usize {
                1
            }
            fn apply_increment(&self, _: &HVector, _: &IncrementSample) -> Result<HVector> {
                Ok(HVector::from_raw(Space::V, vec![f64::INFINITY]))
            }
        }
        let c = SPDEConfig::new(
            SemigroupSpec::new(vec![-1.0]).unwrap(),
            Arc::new(DriftFixture::Zero),
            Arc::new(Explode),
            HVector::zeros(Space::V, 1),
            1.0,
            0.25,
            CylindricalCharacteristics::standard_gaussian(1),
        )
        .unwrap();
        let err = solve_exp_euler(&c, &mut RngStream::new(0, 0).noise()).unwrap_err();
        assert_eq!(err, Error::Numeric("state became non-finite at step 1".into()));
    }

    #[test]
    fn ou_oracle_agrees_with_isometry() {
        // Psi(s) = S(t - s) phi is deterministic; its isometry value on a fine
        // grid converges to the OU second moment.
        let semigroup = SemigroupSpec::heat(3);
        let phi = HSOperator::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0], vec![0.3, -0.2]]).unwrap();
        let law = CylindricalCharacteristics::new(
            HVector::zeros(Space::U, 2),
            HSOperator::diag(&[1.0, 0.5]).unwrap(),
            vec![JumpComponent::two_point(2.0, 0.5).unwrap(), JumpComponent::none()],
        )
        .unwrap();
        let t = 0.7;
        let oracle = ou_second_moment(&semigroup, &phi, &law, &HVector::zeros(Space::V, 3), t).unwrap();
        let n = 4096;
        let grid = TimeGrid::uniform(t, n).unwrap();
        let ops = (0..n)
            .map(|k| {
                let mid = (grid.times()[k] + grid.times()[k + 1]) / 2.0;
                let f = semigroup.factors(t - mid).unwrap();
                HSOperator::diag(&f).unwrap().compose(&phi).unwrap()
            })
            .collect();
        let psi = SimpleProcess::deterministic(grid, ops).unwrap();
        assert_relative_eq!(isometry_rhs(&psi, &law).unwrap(), oracle, max_relative = 1e-5);
    }

    #[test]
    fn richardson_bias_on_exact_first_order_sequence() {
        let exact = 2.0;
        let m = |h: f64| exact + 3.0 * h;
        let b = richardson_bias([m(0.04), m(0.02), m(0.01)]);
        assert_relative_eq!(b, 0.03, max_relative = 1e-9);
    }

    fn heat_fixture(n: usize, dt: f64) -> SPDEConfig {
        let phi = HSOperator::diag(&(1..=n).map(|k| 1.0 / k as f64).collect::<Vec<_>>()).unwrap();
        cfg(
            SemigroupSpec::heat(n),
            DriftFixture::Zero,
            NoiseFixture::Constant(phi),
            vec![0.0; n],
            dt,
            CylindricalCharacteristics::standard_gaussian(n),
        )
    }

    #[test]
    fn linear_oracle_small() {
        let rec = verify_linear_oracle(&heat_fixture(4, 1.0 / 64.0), mc(4_000)).unwrap();
        assert!(rec.pass, "{rec:?}");
    }

    #[test]
    fn tb_norm_examples() {
        let times = vec![0.0, 0.5, 1.0];
        let sol = |f: &dyn Fn(f64) -> f64| EnsembleSolution {
            times: times.clone(),
            mean_sq: times.iter().map(|&t| MCEstimate::exact(f(t))).collect(),
            paths: Vec::new(),
        };
        assert_eq!(tb_norm(&sol(&|_| 0.0), 1.0).unwrap(), 0.0);
        assert_eq!(tb_norm(&sol(&|_| 1.0), 3.7).unwrap(), 1.0);
        assert_eq!(tb_norm(&sol(&|t| (2.0 * t).exp()), 4.0).unwrap(), 1.0);
        assert!(tb_norm(&sol(&|_| 1.0), 0.0).is_err());
    }

    #[test]
    fn picard_without_forcing_is_the_orbit() {
        let mut c = cfg(
            SemigroupSpec::heat(2),
            DriftFixture::Zero,
            NoiseFixture::Zero { rows: 2, cols: 2 },
            vec![1.0, -0.5],
            0.125,
            CylindricalCharacteristics::standard_gaussian(2),
        );
        let out = picard_solve(&c, mc(8), 1).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterates[1].tb_diff, 0.0);
        let path = &out.solution.paths[0];
        for (t, x) in path.times.iter().zip(&path.values) {
            let orbit = c.semigroup.apply(*t, &c.x0).unwrap();
            for (a, b) in x.coords().iter().zip(orbit.coords()) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
        c.scheme = Scheme::Picard(PicardOptions {
            initial: InitialIterate::Orbit,
            ..Default::default()
        });
        let out = picard_solve(&c, mc(8), 0).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn picard_fixed_point_is_exp_euler() {
        let phi = HSOperator::from_rows(&[vec![0.5, 0.1], vec![0.0, 0.7]]).unwrap();
        let c = cfg(
            SemigroupSpec::heat(2),
            DriftFixture::Sine { c: 0.8 },
            NoiseFixture::Damped(phi),
            vec![1.0, 0.5],
            1.0 / 16.0,
            CylindricalCharacteristics::new(
                HVector::zeros(Space::U, 2),
                HSOperator::identity(2),
                vec![JumpComponent::two_point(1.0, 0.5).unwrap(); 2],
            )
            .unwrap(),
        );
        let grid = c.grid();
        let incs = replica_increments(&c, &grid, 1, 0).unwrap();
        let euler = exp_euler_states(&c, &incs).unwrap();
        let limit = picard_iterate(&c, &incs, grid.times(), InitialIterate::Zero, 100).unwrap();
        assert_eq!(limit, euler);
    }

    #[test]
    fn picard_contracts_and_matches_euler() {
        let phi = HSOperator::diag(&[1.0, 0.5, 1.0 / 3.0]).unwrap();
        let c = cfg(
            SemigroupSpec::heat(3),
            DriftFixture::Linear { c: -1.0 },
            NoiseFixture::Constant(phi),
            vec![1.0, 0.0, 0.0],
            1.0 / 32.0,
            CylindricalCharacteristics::standard_gaussian(3),
        );
        let out = picard_solve(&c, mc(1_000), 0).unwrap();
        assert!(out.converged);
        for d in &out.iterates[1..] {
            assert!(d.ratio.unwrap() < 1.0, "{:?}", out.iterates);
        }
        assert!(verify_picard_euler(&c, mc(1_000)).unwrap().pass);
        assert!(verify_picard_uniqueness(&c, mc(500)).unwrap().pass);
    }

    #[test]
    fn non_contraction_is_diagnosed() {
        let c = cfg(
            SemigroupSpec::new(vec![0.0]).unwrap(),
            DriftFixture::Linear { c: 40.0 },
            NoiseFixture::Zero { rows: 1, cols: 1 },
            vec![1.0],
            1.0 / 64.0,
            CylindricalCharacteristics::zero(1),
        )
        .with_scheme(Scheme::Picard(PicardOptions {
            beta: Some(1.0),
            ..Default::default()
        }));
        let err = picard_solve(&c, mc(2), 0).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("larger beta")), "{err:?}");
    }

    #[test]
    fn damped_noise_moments_are_stable_under_refinement() {
        let phi = HSOperator::diag(&[1.0, 0.5]).unwrap();
        let run = |dt: f64| {
            let c = cfg(
                SemigroupSpec::heat(2),
                DriftFixture::Sine { c: 0.5 },
                NoiseFixture::Damped(phi.clone()),
                vec![0.5, 0.5],
                dt,
                CylindricalCharacteristics::standard_gaussian(2),
            );
            solve_ensemble(&c, mc(4_000), 0).unwrap()
        };
        let (coarse, fine) = (run(1.0 / 32.0), run(1.0 / 64.0));
        let bound = 0.5 + 1.25 + 1.0;
        assert!(fine.sup_mean_sq() < bound);
        assert!((coarse.sup_mean_sq() - fine.sup_mean_sq()).abs() < 0.05);
    }

    #[test]
    fn ensemble_is_worker_independent() {
        let c = heat_fixture(3, 1.0 / 16.0);
        let a = solve_ensemble(&c, McConfig::new(600, 5, 1), 2).unwrap();
        let b = solve_ensemble(&c, McConfig::new(600, 5, 7), 2).unwrap();
        assert_eq!(a, b);
    }
}
