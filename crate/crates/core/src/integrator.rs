//! The stochastic integral `I(Psi) = int_0^T Psi(s) dL(s)`.
//!
//! For a simple process `Psi = sum_k Phi_k 1_{(t_k, t_{k+1}]}` the integral is
//! the finite sum `sum_k J_{t_k, t_{k+1}}(Phi_k)`. Predictable integrands are
//! evaluated at the left end of each grid interval, which turns them into
//! simple processes on that grid; refining the grid gives the approximating
//! sequence along which the integral is extended by continuity.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::cylindrical::CylindricalCharacteristics;
use crate::error::{check_shape, Error, Result};
use crate::hilbert::{HSOperator, HVector, Space};
use crate::levy::{coarsen, sample_path_increments, IncrementSample, RngStream, TimeGrid};
use crate::mc::{fanout, fanout_vec, MCEstimate, McConfig};
use crate::radonification::{radonify, History, SimpleRandomOperator};
use crate::report::{CheckRecord, ToleranceRule};

/// Operator-valued step process on a deterministic grid.
#[derive(Debug, Clone)]
pub struct SimpleProcess {
    grid: TimeGrid,
    ops: Vec<SimpleRandomOperator>,
}

impl SimpleProcess {
    pub fn new(grid: TimeGrid, ops: Vec<SimpleRandomOperator>) -> Result<Self> {
        check_shape("one operator per grid interval", grid.steps(), ops.len())?;
        for op in &ops[1..] {
            check_shape("integrand rows", ops[0].rows(), op.rows())?;
            check_shape("integrand cols", ops[0].cols(), op.cols())?;
        }
        Ok(Self { grid, ops })
    }

    /// `Psi(s) = op` for every `s`.
    pub fn constant(grid: TimeGrid, op: HSOperator) -> Self {
        let ops = vec![SimpleRandomOperator::deterministic(op); grid.steps()];
        Self { grid, ops }
    }

    pub fn deterministic(grid: TimeGrid, ops: Vec<HSOperator>) -> Result<Self> {
        Self::new(grid, ops.into_iter().map(SimpleRandomOperator::deterministic).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn ops(&self) -> &[SimpleRandomOperator] {
        &self.ops
    }

    pub fn rows(&self) -> usize {
        self.ops[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.ops[0].cols()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    /// `||Psi||_H^2 = sum_k (t_{k+1} - t_k) E||Phi_k||_HS^2`.
    pub fn h_norm_sq(&self) -> f64 {
        self.ops
            .iter()
            .enumerate()
            .map(|(k, op)| self.grid.dt(k) * op.expected_hs_norm_sq())
            .sum()
    }

    pub fn h_norm(&self) -> f64 {
        self.h_norm_sq().sqrt()
    }

    /// Interval-wise `a * self + b * other`, keeping `self`'s branch laws.
    pub fn lin_comb(&self, a: f64, other: &SimpleProcess, b: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("processes live on different grids".into()));
        }
        let ops = self
            .ops
            .iter()
            .zip(&other.ops)
            .map(|(x, y)| x.lin_comb(a, y, b))
            .collect::<Result<_>>()?;
        Ok(Self {
            grid: self.grid.clone(),
            ops,
        })
    }

    pub fn is_deterministic(&self) -> bool {
        self.ops.iter().all(|op| op.ops().len() == 1)
    }
}

/// One realization of the noise and of the integrand's branches.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub increments: Vec<IncrementSample>,
    pub branches: Vec<usize>,
}

/// Draws increments over `process.grid()` from the noise lane and then, in
/// time order, each interval's branch from the branch lane. The branch of
/// interval `k` sees only the increments of intervals `0..k`.
pub fn realize(
    process: &SimpleProcess,
    law: &CylindricalCharacteristics,
    stream: RngStream,
) -> Result<Realization> {
    check_shape("integrand domain dimension", law.dim(), process.cols())?;
    let increments = sample_path_increments(law, &process.grid, &mut stream.noise())?;
    let mut rng = stream.branch();
    let branches = realize_branches(process, &increments, &mut rng)?;
    Ok(Realization {
        increments,
        branches,
    })
}

fn realize_branches<R: Rng + ?Sized>(
    process: &SimpleProcess,
    increments: &[IncrementSample],
    rng: &mut R,
) -> Result<Vec<usize>> {
    process
        .ops
        .iter()
        .enumerate()
        .map(|(k, op)| op.realize_branch(&History::new(&increments[..k]), rng))
        .collect()
}

fn check_alignment(grid: &TimeGrid, increments: &[IncrementSample]) -> Result<()> {
    check_shape("increments per grid interval", grid.steps(), increments.len())?;
    for (k, inc) in increments.iter().enumerate() {
        let dt = grid.dt(k);
        if (inc.dt - dt).abs() > 1e-12 * dt.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "increment {k} has length {} but the grid interval has length {dt}",
                inc.dt
            )));
        }
    }
    Ok(())
}

/// Contribution `J(Phi_k)` of each interval.
fn contributions(
    process: &SimpleProcess,
    increments: &[IncrementSample],
    branches: &[usize],
) -> Result<Vec<HVector>> {
    check_alignment(&process.grid, increments)?;
    check_shape("branches per grid interval", process.ops.len(), branches.len())?;
    process
        .ops
        .iter()
        .zip(increments)
        .zip(branches)
        .map(|((op, inc), &b)| {
            let phi = op.ops().get(b).ok_or_else(|| {
                Error::InvalidInput(format!("branch {b} out of range for {} branches", op.ops().len()))
            })?;
            radonify(phi, inc)
        })
        .collect()
}

/// `I(Psi) = sum_k J(Phi_k)` for a realized noise path and branch sequence.
pub fn integrate_simple(
    process: &SimpleProcess,
    increments: &[IncrementSample],
    branches: &[usize],
) -> Result<HVector> {
    let parts = contributions(process, increments, branches)?;
    Ok(sum_vectors(process.rows(), &parts))
}

fn sum_vectors(dim: usize, parts: &[HVector]) -> HVector {
    let mut acc = vec![0.0; dim];
    for p in parts {
        acc.iter_mut().zip(p.coords()).for_each(|(a, x)| *a += x);
    }
    HVector::from_raw(Space::V, acc)
}

/// Samples `I(Psi)` on replica stream `stream`.
pub fn sample_integral(
    process: &SimpleProcess,
    law: &CylindricalCharacteristics,
    stream: RngStream,
) -> Result<HVector> {
    let r = realize(process, law, stream)?;
    integrate_simple(process, &r.increments, &r.branches)
}

/// A `V`-valued path on a grid, constant on `[t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub values: Vec<HVector>,
}

impl PathSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Right-continuous step interpolation.
    pub fn at(&self, t: f64) -> Option<&HVector> {
        if self.times.is_empty() || t < self.times[0] {
            return None;
        }
        let idx = self.times.partition_point(|&s| s <= t) - 1;
        self.values.get(idx)
    }

    pub fn last(&self) -> Option<&HVector> {
        self.values.last()
    }

    /// `X(t_j) - X(t_i)`.
    pub fn increment(&self, i: usize, j: usize) -> Result<HVector> {
        self.values[j].sub(&self.values[i])
    }
}

fn partial_sums(times: &[f64], dim: usize, parts: &[HVector]) -> PathSample {
    let mut values = Vec::with_capacity(parts.len() + 1);
    let mut acc = vec![0.0; dim];
    values.push(HVector::from_raw(Space::V, acc.clone()));
    for p in parts {
        acc.iter_mut().zip(p.coords()).for_each(|(a, x)| *a += x);
        values.push(HVector::from_raw(Space::V, acc.clone()));
    }
    PathSample {
        times: times.to_vec(),
        values,
    }
}

/// `t -> int_0^t Psi dL` at every grid time.
pub fn integral_path_simple(
    process: &SimpleProcess,
    increments: &[IncrementSample],
    branches: &[usize],
) -> Result<PathSample> {
    let parts = contributions(process, increments, branches)?;
    Ok(partial_sums(process.grid.times(), process.rows(), &parts))
}

/// `int_0^T E[||Q^{1/2} Psi^*||_HS^2 + int ||Psi u||^2 nu(du)] ds`, exactly.
///
/// Only defined for martingale noise.
pub fn isometry_rhs(process: &SimpleProcess, law: &CylindricalCharacteristics) -> Result<f64> {
    require_martingale(law)?;
    process
        .ops
        .iter()
        .enumerate()
        .map(|(k, op)| {
            let weight = op
                .branches()
                .map(|(w, phi)| Ok(w * law.ito_weight(phi)?))
                .sum::<Result<f64>>()?;
            Ok(process.grid.dt(k) * weight)
        })
        .sum()
}

fn require_martingale(law: &CylindricalCharacteristics) -> Result<()> {
    if law.is_martingale() {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "the Ito isometry requires driftless (martingale) noise".into(),
        ))
    }
}

/// `2 ||L~(1)||^2 ||Psi||_H^2 + 2 T ||p~||^2 ||Psi||_H^2`, the bound on
/// `E||I(Psi)||^2` through the martingale and drift parts.
pub fn continuity_bound(process: &SimpleProcess, law: &CylindricalCharacteristics) -> Result<f64> {
    check_shape("integrand domain dimension", law.dim(), process.cols())?;
    let h = process.h_norm_sq();
    let martingale = law.martingale_part().operator_norm_sq(1.0)?;
    Ok(2.0 * martingale * h + 2.0 * process.horizon() * law.drift().norm_sq() * h)
}

/// `sum_k (t_{k+1} - t_k) phi_k p~`: the integral against pure drift noise
/// for a deterministic integrand.
pub fn drift_integral(process: &SimpleProcess, law: &CylindricalCharacteristics) -> Result<HVector> {
    if !process.is_deterministic() {
        return Err(Error::InvalidInput(
            "drift integral needs a deterministic integrand".into(),
        ));
    }
    let mut acc = vec![0.0; process.rows()];
    for (k, op) in process.ops.iter().enumerate() {
        let image = op.ops()[0].apply(law.drift())?;
        let dt = process.grid.dt(k);
        acc.iter_mut().zip(image.coords()).for_each(|(a, x)| *a += dt * x);
    }
    Ok(HVector::from_raw(Space::V, acc))
}

/// Monte Carlo estimate of `E||I(Psi)||^2`.
pub fn integral_second_moment(
    process: &SimpleProcess,
    law: &CylindricalCharacteristics,
    mc: McConfig,
) -> Result<MCEstimate> {
    fanout(mc.replicas, mc.workers, |r| {
        Ok(sample_integral(process, law, RngStream::new(mc.seed, r))?.norm_sq())
    })
}

/// Ito isometry: `E||I(Psi)||^2` against [`isometry_rhs`] within three
/// standard errors.
pub fn verify_isometry(
    process: &SimpleProcess,
    law: &CylindricalCharacteristics,
    mc: McConfig,
) -> Result<CheckRecord> {
    mc.require_replicas(10_000)?;
    let rhs = isometry_rhs(process, law)?;
    let lhs = integral_second_moment(process, law, mc)?;
    Ok(CheckRecord::new(
        "ito_isometry",
        lhs,
        rhs,
        ToleranceRule::WithinStdErrors { k: 3.0 },
    ))
}

/// Continuity: `E||I(Psi)||^2 <= 2 (S + R)` up to three standard errors.
pub fn verify_continuity(
    process: &SimpleProcess,
    law: &CylindricalCharacteristics,
    mc: McConfig,
) -> Result<CheckRecord> {
    let rhs = continuity_bound(process, law)?;
    let lhs = integral_second_moment(process, law, mc)?;
    Ok(CheckRecord::new(
        "continuity_bound",
        lhs,
        rhs,
        ToleranceRule::AtMostBoundPlusStdErrors { k: 3.0 },
    ))
}

/// Orthogonality of the path's increments to its past:
/// `E<X(T) - X(t_split), X(t_split)> = 0` for martingale noise.
pub fn verify_orthogonal_increments(
    process: &SimpleProcess,
    law: &CylindricalCharacteristics,
    split: usize,
    mc: McConfig,
) -> Result<CheckRecord> {
    require_martingale(law)?;
    let n = process.grid.steps();
    if split == 0 || split >= n {
        return Err(Error::InvalidInput(format!(
            "split index {split} must lie strictly inside 0..{n}"
        )));
    }
    let lhs = fanout(mc.replicas, mc.workers, |r| {
        let real = realize(process, law, RngStream::new(mc.seed, r))?;
        let path = integral_path_simple(process, &real.increments, &real.branches)?;
        path.increment(split, n)?.inner(&path.values[split])
    })?;
    Ok(CheckRecord::new(
        "orthogonal_increments",
        lhs,
        0.0,
        ToleranceRule::WithinStdErrors { k: 3.0 },
    ))
}

/// Evaluates a predictable integrand at time `t` from the strictly earlier
/// increments.
pub type Evaluator = Arc<dyn Fn(f64, &History<'_>) -> HSOperator + Send + Sync>;

/// A predictable integrand given by an evaluation rule and a uniform bound on
/// its Hilbert-Schmidt norm.
#[derive(Clone)]
pub struct PredictableProcessSpec {
    rows: usize,
    cols: usize,
    bound: f64,
    evaluator: Evaluator,
}

impl fmt::Debug for PredictableProcessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PredictableProcessSpec")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl PredictableProcessSpec {
    pub fn new(rows: usize, cols: usize, bound: f64, evaluator: Evaluator) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "integrand bound must be finite and non-negative, got {bound}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            bound,
            evaluator,
        })
    }

    /// A history-independent integrand `t -> f(t)`.
    pub fn deterministic(
        rows: usize,
        cols: usize,
        bound: f64,
        f: impl Fn(f64) -> HSOperator + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(rows, cols, bound, Arc::new(move |t, _: &History<'_>| f(t)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn evaluate(&self, t: f64, history: &History<'_>) -> Result<HSOperator> {
        let op = (self.evaluator)(t, history);
        check_shape("integrand rows", self.rows, op.rows())?;
        check_shape("integrand cols", self.cols, op.cols())?;
        let norm = op.hs_norm();
        if norm > self.bound * (1.0 + 1e-12) {
            return Err(Error::Contract(format!(
                "integrand norm {norm} at t = {t} exceeds its declared bound {}",
                self.bound
            )));
        }
        Ok(op)
    }

    /// Left-point operators `Psi(t_k)` for a realized increment sequence.
    fn left_points(&self, grid: &TimeGrid, increments: &[IncrementSample]) -> Result<Vec<HSOperator>> {
        check_alignment(grid, increments)?;
        grid.times()[..grid.steps()]
            .iter()
            .enumerate()
            .map(|(k, &t)| self.evaluate(t, &History::new(&increments[..k])))
            .collect()
    }

    /// The simple process obtained by freezing `Psi` at the left end of each
    /// interval, for one realized increment sequence.
    pub fn freeze(&self, grid: &TimeGrid, increments: &[IncrementSample]) -> Result<SimpleProcess> {
        SimpleProcess::deterministic(grid.clone(), self.left_points(grid, increments)?)
    }
}

/// Left-point Ito sum `sum_k Psi(t_k) delta_k`.
pub fn integrate_predictable_with(
    spec: &PredictableProcessSpec,
    grid: &TimeGrid,
    increments: &[IncrementSample],
) -> Result<HVector> {
    let frozen = spec.freeze(grid, increments)?;
    integrate_simple(&frozen, increments, &vec![0; grid.steps()])
}

/// Result of [`integrate_predictable`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictableIntegral {
    pub value: HVector,
    pub increments: Vec<IncrementSample>,
}

pub fn integrate_predictable<R: Rng + ?Sized>(
    spec: &PredictableProcessSpec,
    grid: &TimeGrid,
    law: &CylindricalCharacteristics,
    rng: &mut R,
) -> Result<PredictableIntegral> {
    check_shape("integrand domain dimension", law.dim(), spec.cols)?;
    let increments = sample_path_increments(law, grid, rng)?;
    let value = integrate_predictable_with(spec, grid, &increments)?;
    Ok(PredictableIntegral { value, increments })
}

pub fn integral_path_predictable(
    spec: &PredictableProcessSpec,
    grid: &TimeGrid,
    increments: &[IncrementSample],
) -> Result<PathSample> {
    let frozen = spec.freeze(grid, increments)?;
    integral_path_simple(&frozen, increments, &vec![0; grid.steps()])
}

/// Left-point quadrature of a functional of `Psi(t_k)`, averaged over
/// histories.
fn quadrature(
    spec: &PredictableProcessSpec,
    grid: &TimeGrid,
    law: &CylindricalCharacteristics,
    mc: McConfig,
    weight: impl Fn(&HSOperator) -> Result<f64> + Sync,
) -> Result<MCEstimate> {
    check_shape("integrand domain dimension", law.dim(), spec.cols)?;
    fanout(mc.replicas, mc.workers, |r| {
        let increments = sample_path_increments(law, grid, &mut RngStream::new(mc.seed, r).noise())?;
        spec.left_points(grid, &increments)?
            .iter()
            .enumerate()
            .map(|(k, op)| Ok(grid.dt(k) * weight(op)?))
            .sum()
    })
}

/// `||Psi||_H^2` by left-point quadrature, averaged over histories.
pub fn h_norm_sq_predictable(
    spec: &PredictableProcessSpec,
    grid: &TimeGrid,
    law: &CylindricalCharacteristics,
    mc: McConfig,
) -> Result<MCEstimate> {
    quadrature(spec, grid, law, mc, |op| Ok(op.hs_norm_sq()))
}

/// Isometry right-hand side for a predictable integrand by left-point
/// quadrature.
pub fn isometry_rhs_predictable(
    spec: &PredictableProcessSpec,
    grid: &TimeGrid,
    law: &CylindricalCharacteristics,
    mc: McConfig,
) -> Result<MCEstimate> {
    require_martingale(law)?;
    quadrature(spec, grid, law, mc, |op| law.ito_weight(op))
}

pub fn verify_isometry_predictable(
    spec: &PredictableProcessSpec,
    grid: &TimeGrid,
    law: &CylindricalCharacteristics,
    mc: McConfig,
) -> Result<CheckRecord> {
    mc.require_replicas(10_000)?;
    let rhs = isometry_rhs_predictable(spec, grid, law, mc)?;
    let lhs = fanout(mc.replicas, mc.workers, |r| {
        let mut rng = RngStream::new(mc.seed, r).noise();
        Ok(integrate_predictable(spec, grid, law, &mut rng)?.value.norm_sq())
    })?;
    Ok(CheckRecord::with_rhs_se(
        "ito_isometry_predictable",
        lhs,
        rhs.mean,
        rhs.std_error,
        ToleranceRule::WithinCombinedStdErrors { k: 3.0 },
    ))
}

/// `L^2` distances `||I_l - I_{l+1}||` between left-point integrals on the
/// grids `base` refined `2^l` and `2^{l+1}` times, `l = 0..levels`.
///
/// Every level is driven by the same finest increments, coarsened by
/// summation, so the distances are measured pathwise.
pub fn refinement_distances(
    spec: &PredictableProcessSpec,
    base: &TimeGrid,
    levels: usize,
    law: &CylindricalCharacteristics,
    mc: McConfig,
) -> Result<Vec<MCEstimate>> {
    if levels == 0 {
        return Err(Error::InvalidInput("need at least one refinement level".into()));
    }
    let grids: Vec<TimeGrid> = (0..=levels)
        .map(|l| base.refine(1 << l))
        .collect::<Result<_>>()?;
    let finest = &grids[levels];
    let sq = fanout_vec(mc.replicas, mc.workers, levels, |r| {
        let fine = sample_path_increments(law, finest, &mut RngStream::new(mc.seed, r).noise())?;
        let values = grids
            .iter()
            .enumerate()
            .map(|(l, g)| {
                let incs = coarsen(&fine, 1 << (levels - l))?;
                integrate_predictable_with(spec, g, &incs)
            })
            .collect::<Result<Vec<_>>>()?;
        values
            .windows(2)
            .map(|w| Ok(w[0].sub(&w[1])?.norm_sq()))
            .collect()
    })?;
    Ok(sq.iter().map(MCEstimate::sqrt).collect())
}

/// `Psi(s) = Z_k phi_k` on `(t_k, t_{k+1}]` with `Z_k` uniform on `[0, 1)`
/// and independent of the increments from `t_k` on: a square-integrable
/// integrand that is not simple, with explicit simple approximations.
#[derive(Debug, Clone)]
pub struct ModulatedProcess {
    grid: TimeGrid,
    base: Vec<HSOperator>,
}

impl ModulatedProcess {
    pub fn new(grid: TimeGrid, base: Vec<HSOperator>) -> Result<Self> {
        // Shape validation is the same as for a simple process.
        SimpleProcess::deterministic(grid.clone(), base.clone())?;
        Ok(Self { grid, base })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `||Psi||_H^2 = sum_k dt_k ||phi_k||^2 E[Z^2]` with `E[Z^2] = 1/3`.
    pub fn h_norm_sq(&self) -> f64 {
        self.weighted_sum(1.0 / 3.0)
    }

    /// `Psi_n`: `Z_k` replaced by the midpoint of its cell in the uniform
    /// partition of `[0, 1)` into `2^n` cells.
    pub fn quantized(&self, n: u32) -> Result<SimpleProcess> {
        let cells = 1usize << n;
        let w = 1.0 / cells as f64;
        let ops = self
            .base
            .iter()
            .map(|phi| {
                SimpleRandomOperator::weighted(
                    (0..cells)
                        .map(|i| (w, phi.scaled((i as f64 + 0.5) * w)))
                        .collect(),
                )
            })
            .collect::<Result<_>>()?;
        SimpleProcess::new(self.grid.clone(), ops)
    }

    /// `||Psi - Psi_n||_H^2 = sum_k dt_k ||phi_k||^2 h^2 / 12`, `h = 2^-n`.
    pub fn approximation_error_sq(&self, n: u32) -> f64 {
        let h = 0.5f64.powi(n as i32);
        self.weighted_sum(h * h / 12.0)
    }

    fn weighted_sum(&self, factor: f64) -> f64 {
        self.base
            .iter()
            .enumerate()
            .map(|(k, phi)| self.grid.dt(k) * phi.hs_norm_sq() * factor)
            .sum()
    }

    /// `I(Psi)` and `I(Psi_n)` on the same noise and the same `Z_k`.
    ///
    /// Quantized branches are realized by inverse-CDF from the same uniform
    /// that gives `Z_k`, so branch `i` is drawn exactly when
    /// `floor(2^n Z_k) = i`.
    pub fn coupled_integrals(
        &self,
        quantized: &SimpleProcess,
        law: &CylindricalCharacteristics,
        stream: RngStream,
    ) -> Result<(HVector, HVector)> {
        let real = realize(quantized, law, stream)?;
        let mut rng = stream.branch();
        let mut exact = vec![0.0; self.base[0].rows()];
        for (phi, inc) in self.base.iter().zip(&real.increments) {
            let z: f64 = rng.random();
            let image = radonify(phi, inc)?;
            exact.iter_mut().zip(image.coords()).for_each(|(a, x)| *a += z * x);
        }
        let approx = integrate_simple(quantized, &real.increments, &real.branches)?;
        Ok((HVector::from_raw(Space::V, exact), approx))
    }

    /// Monte Carlo `||I(Psi) - I(Psi_n)||_{L^2}`.
    pub fn integral_distance(
        &self,
        n: u32,
        law: &CylindricalCharacteristics,
        mc: McConfig,
    ) -> Result<MCEstimate> {
        let quantized = self.quantized(n)?;
        let sq = fanout(mc.replicas, mc.workers, |r| {
            let (exact, approx) = self.coupled_integrals(&quantized, law, RngStream::new(mc.seed, r))?;
            Ok(exact.sub(&approx)?.norm_sq())
        })?;
        Ok(sq.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cylindrical::JumpComponent;
    use approx::assert_relative_eq;

    fn mc(replicas: u64) -> McConfig {
        McConfig::new(replicas, 77, 4)
    }

    fn inc(dt: f64, coords: Vec<f64>) -> IncrementSample {
        IncrementSample {
            dt,
            coords: HVector::in_u(coords).unwrap(),
        }
    }

    fn jump_law(n: usize) -> CylindricalCharacteristics {
        CylindricalCharacteristics::new(
            HVector::zeros(Space::U, n),
            HSOperator::identity(n),
            vec![JumpComponent::two_point(1.0, 1.0).unwrap(); n],
        )
        .unwrap()
    }

    #[test]
    fn integrate_simple_examples() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let psi = SimpleProcess::deterministic(
            grid.clone(),
            vec![HSOperator::identity(2), HSOperator::identity(2).scaled(2.0)],
        )
        .unwrap();
        let incs = vec![inc(0.5, vec![1.0, 0.0]), inc(0.5, vec![0.0, 1.0])];
        assert_eq!(integrate_simple(&psi, &incs, &[0, 0]).unwrap().coords(), &[1.0, 2.0]);

        let zero = SimpleProcess::constant(grid.clone(), HSOperator::zeros(2, 2));
        assert!(integrate_simple(&zero, &incs, &[0, 0]).unwrap().is_zero());

        let phi = HSOperator::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let one = SimpleProcess::constant(TimeGrid::uniform(1.0, 1).unwrap(), phi.clone());
        let d = inc(1.0, vec![0.3, 0.7]);
        assert_eq!(
            integrate_simple(&one, std::slice::from_ref(&d), &[0]).unwrap(),
            radonify(&phi, &d).unwrap()
        );
    }

    #[test]
    fn misaligned_increments_are_rejected() {
        let psi = SimpleProcess::constant(TimeGrid::uniform(1.0, 2).unwrap(), HSOperator::identity(1));
        assert!(integrate_simple(&psi, &[inc(0.5, vec![1.0])], &[0]).is_err());
        assert!(integrate_simple(&psi, &[inc(0.5, vec![1.0]), inc(0.25, vec![1.0])], &[0, 0]).is_err());
        assert!(integrate_simple(&psi, &[inc(0.5, vec![1.0]), inc(0.5, vec![1.0])], &[0, 1]).is_err());
    }

    #[test]
    fn h_norm_examples() {
        let zero = SimpleProcess::constant(TimeGrid::uniform(1.0, 3).unwrap(), HSOperator::zeros(2, 2));
        assert_eq!(zero.h_norm(), 0.0);
        let id = SimpleProcess::constant(TimeGrid::uniform(2.0, 1).unwrap(), HSOperator::identity(3));
        assert_relative_eq!(id.h_norm(), 6f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn predictable_h_norm_converges_at_first_order() {
        let spec = PredictableProcessSpec::deterministic(1, 1, 1.0, |t| HSOperator::identity(1).scaled(t)).unwrap();
        let law = CylindricalCharacteristics::standard_gaussian(1);
        let mut errors = Vec::new();
        for n in [16usize, 32, 64, 128] {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let est = h_norm_sq_predictable(&spec, &grid, &law, mc(2)).unwrap();
            assert_eq!(est.std_error, 0.0);
            let nf = n as f64;
            let left_sum = (nf - 1.0) * nf * (2.0 * nf - 1.0) / (6.0 * nf.powi(3));
            assert_relative_eq!(est.mean, left_sum, max_relative = 1e-12);
            errors.push((est.mean.sqrt() - 1.0 / 3f64.sqrt()).abs());
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn isometry_rhs_examples() {
        let q = [0.5, 1.0, 2.0];
        let jumps = vec![
            JumpComponent::two_point(1.0, 1.0).unwrap(),
            JumpComponent::gaussian(2.0, 0.5).unwrap(),
            JumpComponent::none(),
        ];
        let total: f64 = q.iter().zip(&jumps).map(|(q, j)| q + j.variance_rate()).sum();
        let law = CylindricalCharacteristics::new(HVector::zeros(Space::U, 3), HSOperator::diag(&q).unwrap(), jumps)
            .unwrap();
        let id = SimpleProcess::constant(TimeGrid::uniform(1.0, 1).unwrap(), HSOperator::identity(3));
        assert_relative_eq!(isometry_rhs(&id, &law).unwrap(), total, max_relative = 1e-12);
        let scaled = SimpleProcess::constant(TimeGrid::uniform(2.5, 3).unwrap(), HSOperator::identity(3).scaled(1.5));
        assert_relative_eq!(isometry_rhs(&scaled, &law).unwrap(), 1.5 * 1.5 * 2.5 * total, max_relative = 1e-12);
        let zero = SimpleProcess::constant(TimeGrid::uniform(1.0, 2).unwrap(), HSOperator::zeros(3, 3));
        assert_eq!(isometry_rhs(&zero, &law).unwrap(), 0.0);

        let drifted = CylindricalCharacteristics::new(
            HVector::in_u(vec![1.0, 0.0, 0.0]).unwrap(),
            HSOperator::identity(3),
            vec![JumpComponent::none(); 3],
        )
        .unwrap();
        assert!(isometry_rhs(&id, &drifted).is_err());
    }

    #[test]
    fn two_interval_isometry_rhs() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let psi = SimpleProcess::deterministic(grid, vec![HSOperator::identity(2), HSOperator::identity(2).scaled(2.0)])
            .unwrap();
        assert_relative_eq!(isometry_rhs(&psi, &jump_law(2)).unwrap(), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn continuity_bound_examples() {
        let id = SimpleProcess::constant(TimeGrid::uniform(1.0, 1).unwrap(), HSOperator::identity(4));
        let gauss = CylindricalCharacteristics::standard_gaussian(4);
        assert_relative_eq!(continuity_bound(&id, &gauss).unwrap(), 8.0, max_relative = 1e-9);

        let drift = CylindricalCharacteristics::new(
            HVector::basis(Space::U, 1, 0).unwrap(),
            HSOperator::zeros(1, 1),
            vec![JumpComponent::none()],
        )
        .unwrap();
        let one = SimpleProcess::constant(TimeGrid::uniform(1.0, 1).unwrap(), HSOperator::identity(1));
        assert_eq!(continuity_bound(&one, &drift).unwrap(), 2.0);
        let exact = sample_integral(&one, &drift, RngStream::new(0, 0)).unwrap();
        assert_eq!(exact.norm_sq(), 1.0);
        assert_eq!(drift_integral(&one, &drift).unwrap().coords(), &[1.0]);

        let zero = SimpleProcess::constant(TimeGrid::uniform(1.0, 1).unwrap(), HSOperator::zeros(4, 4));
        assert_eq!(continuity_bound(&zero, &gauss).unwrap(), 0.0);
    }

    #[test]
    fn verify_isometry_examples() {
        let zero = SimpleProcess::constant(TimeGrid::uniform(1.0, 1).unwrap(), HSOperator::zeros(2, 2));
        let law = jump_law(2);
        let rec = verify_isometry(&zero, &law, mc(10_000)).unwrap();
        assert_eq!((rec.lhs_mean, rec.rhs), (0.0, 0.0));
        assert!(rec.pass);
        assert!(verify_isometry(&zero, &law, mc(9_999)).is_err());

        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let psi = SimpleProcess::deterministic(grid, vec![HSOperator::identity(2), HSOperator::identity(2).scaled(2.0)])
            .unwrap();
        let rec = verify_isometry(&psi, &law, mc(100_000)).unwrap();
        assert!(rec.pass, "{rec:?}");
    }

    #[test]
    fn integral_is_linear_for_shared_realizations() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let a = SimpleProcess::new(
            grid.clone(),
            vec![
                SimpleRandomOperator::weighted(vec![(0.5, HSOperator::identity(2)), (0.5, HSOperator::zeros(2, 2))]).unwrap(),
                SimpleRandomOperator::deterministic(HSOperator::rank_one(2, 2, 1, 0).unwrap()),
                SimpleRandomOperator::deterministic(HSOperator::identity(2).scaled(-1.0)),
            ],
        )
        .unwrap();
        let b = a.lin_comb(0.0, &a, 1.0).unwrap().lin_comb(2.0, &SimpleProcess::constant(grid, HSOperator::diag(&[1.0, 3.0]).unwrap()), 0.0);
        assert!(b.is_err(), "branch counts differ on the first interval");

        let law = jump_law(2);
        for r in 0..50 {
            let real = realize(&a, &law, RngStream::new(5, r)).unwrap();
            let combo = a.lin_comb(2.5, &a.lin_comb(-1.0, &a, 0.0).unwrap(), -0.5).unwrap();
            let lhs = integrate_simple(&combo, &real.increments, &real.branches).unwrap();
            let ia = integrate_simple(&a, &real.increments, &real.branches).unwrap();
            let rhs = ia.lin_comb(2.5, &ia.scaled(-1.0), -0.5).unwrap();
            for (x, y) in lhs.coords().iter().zip(rhs.coords()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn path_is_consistent_and_telescopes() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let psi = SimpleProcess::deterministic(
            grid,
            (0..4).map(|k| HSOperator::identity(3).scaled(k as f64 + 1.0)).collect(),
        )
        .unwrap();
        let law = jump_law(3);
        let real = realize(&psi, &law, RngStream::new(3, 1)).unwrap();
        let path = integral_path_simple(&psi, &real.increments, &real.branches).unwrap();
        assert!(path.values[0].is_zero());
        assert_eq!(path.last().unwrap(), &integrate_simple(&psi, &real.increments, &real.branches).unwrap());
        let total = path.increment(0, 2).unwrap().add(&path.increment(2, 4).unwrap()).unwrap();
        for (x, y) in total.coords().iter().zip(path.values[4].coords()) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert_eq!(path.at(0.3), Some(&path.values[1]));
        assert_eq!(path.at(0.25), Some(&path.values[1]));
        assert_eq!(path.at(1.0), Some(&path.values[4]));
        assert_eq!(path.at(-0.1), None);

        let zero = SimpleProcess::constant(TimeGrid::uniform(1.0, 4).unwrap(), HSOperator::zeros(3, 3));
        let zpath = integral_path_simple(&zero, &real.increments, &real.branches).unwrap();
        assert!(zpath.values.iter().all(HVector::is_zero));
    }

    #[test]
    fn predictable_examples() {
        let law = jump_law(2);
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let zero = PredictableProcessSpec::deterministic(2, 2, 0.0, |_| HSOperator::zeros(2, 2)).unwrap();
        let mut rng = RngStream::new(1, 0).noise();
        assert!(integrate_predictable(&zero, &grid, &law, &mut rng).unwrap().value.is_zero());

        let phi = HSOperator::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        let bound = phi.hs_norm();
        let p2 = phi.clone();
        let constant = PredictableProcessSpec::deterministic(2, 2, bound, move |_| p2.clone()).unwrap();
        let res = integrate_predictable(&constant, &grid, &law, &mut RngStream::new(1, 1).noise()).unwrap();
        let total = &coarsen(&res.increments, 8).unwrap()[0];
        let expected = radonify(&phi, total).unwrap();
        for (x, y) in res.value.coords().iter().zip(expected.coords()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn predictable_bound_violation_is_a_contract_error() {
        let spec = PredictableProcessSpec::deterministic(1, 1, 0.5, |t| HSOperator::identity(1).scaled(t)).unwrap();
        let law = CylindricalCharacteristics::standard_gaussian(1);
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let err = integrate_predictable(&spec, &grid, &law, &mut RngStream::new(0, 0).noise()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn predictable_evaluator_sees_only_the_past() {
        let spec = PredictableProcessSpec::new(
            1,
            1,
            1.0,
            Arc::new(|t: f64, h: &History<'_>| {
                // t_k = k / 4 on this grid, so the prefix has exactly k entries.
                assert_eq!(h.len(), (t * 4.0).round() as usize);
                HSOperator::identity(1)
            }),
        )
        .unwrap();
        let law = CylindricalCharacteristics::standard_gaussian(1);
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        integrate_predictable(&spec, &grid, &law, &mut RngStream::new(0, 0).noise()).unwrap();
    }

    #[test]
    fn predictable_isometry_against_left_sum() {
        let spec = PredictableProcessSpec::deterministic(1, 1, 1.0, |t| HSOperator::identity(1).scaled(t)).unwrap();
        let law = CylindricalCharacteristics::standard_gaussian(1);
        let grid = TimeGrid::uniform(1.0, 128).unwrap();
        let rec = verify_isometry_predictable(&spec, &grid, &law, mc(20_000)).unwrap();
        let n = 128.0f64;
        assert_relative_eq!(rec.rhs, (n - 1.0) * n * (2.0 * n - 1.0) / (6.0 * n.powi(3)), max_relative = 1e-12);
        assert!(rec.pass, "{rec:?}");
    }

    #[test]
    fn refinement_is_cauchy() {
        let spec = PredictableProcessSpec::deterministic(2, 2, 2.0, |t| {
            HSOperator::diag(&[t, (3.0 * t).sin()]).unwrap()
        })
        .unwrap();
        let law = jump_law(2);
        let d = refinement_distances(&spec, &TimeGrid::uniform(1.0, 4).unwrap(), 4, &law, mc(4_000)).unwrap();
        for w in d.windows(2) {
            assert!(w[0].mean >= 1.3 * w[1].mean, "{d:?}");
        }
    }

    #[test]
    fn modulated_process_oracles() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let proc = ModulatedProcess::new(grid, vec![HSOperator::identity(2), HSOperator::identity(2).scaled(2.0)]).unwrap();
        // sum dt ||phi||^2 = 0.5 * 2 + 0.5 * 8 = 5
        assert_relative_eq!(proc.h_norm_sq(), 5.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(proc.approximation_error_sq(1), 5.0 * 0.25 / 12.0, max_relative = 1e-15);
        // H-distance of the quantized process equals the analytic value: the
        // cell-midpoint error of a uniform has variance h^2 / 12.
        let q = proc.quantized(2).unwrap();
        assert_relative_eq!(
            q.h_norm_sq(),
            proc.h_norm_sq() - proc.approximation_error_sq(2),
            max_relative = 1e-12
        );
    }

    #[test]
    fn quantized_branch_matches_uniform_cell() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let proc = ModulatedProcess::new(grid, vec![HSOperator::identity(1); 3]).unwrap();
        let q = proc.quantized(3).unwrap();
        let law = CylindricalCharacteristics::standard_gaussian(1);
        for r in 0..200 {
            let stream = RngStream::new(4, r);
            let real = realize(&q, &law, stream).unwrap();
            let mut rng = stream.branch();
            for b in real.branches {
                let z: f64 = rng.random();
                assert_eq!(b, (z * 8.0).floor() as usize);
            }
        }
    }
}
