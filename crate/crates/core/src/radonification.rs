//! Radonification of cylindrical increments by Hilbert-Schmidt operators.
//!
//! For a deterministic `phi` the random variable `J(phi)` is characterised by
//! `<J(phi), v> = (L(t) - L(s))(phi^* v)`; on the truncated basis this is the
//! matrix-vector product `phi delta`. A simple random operator
//! `Phi = sum_i 1_{A_i} phi_i` with `A_i` measurable before `s` is applied
//! branch-wise, the branch being realized before the increment is seen.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::cylindrical::CylindricalCharacteristics;
use crate::error::{check_shape, Error, Result};
use crate::hilbert::{HSOperator, HVector};
use crate::levy::{sample_increment, IncrementSample, RngStream};
use crate::mc::{fanout, McConfig};
use crate::report::{CheckRecord, ToleranceRule};

const WEIGHT_TOL: f64 = 1e-12;

/// Increments observed strictly before the current interval.
///
/// This is all a branch selector ever sees, which is what makes a selected
/// branch measurable with respect to the past.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    increments: &'a [IncrementSample],
}

impl<'a> History<'a> {
    pub fn new(increments: &'a [IncrementSample]) -> Self {
        Self { increments }
    }

    pub fn empty() -> History<'static> {
        History { increments: &[] }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn increments(&self) -> &'a [IncrementSample] {
        self.increments
    }

    pub fn last(&self) -> Option<&'a IncrementSample> {
        self.increments.last()
    }
}

/// Picks a branch from the observed past.
pub type Selector = Arc<dyn Fn(&History<'_>) -> usize + Send + Sync>;

#[derive(Clone)]
enum BranchRule {
    /// Inverse-CDF of one uniform drawn from the branch lane.
    Draw,
    /// A function of the history prefix.
    Select(Selector),
}

/// A simple random Hilbert-Schmidt operator `sum_i 1_{A_i} phi_i`.
///
/// `weights[i]` is `P(A_i)`. For drawn branches it is the sampling law; for
/// selected branches it is the law the selector induces under the driving
/// noise, declared by whoever builds the selector.
#[derive(Clone)]
pub struct SimpleRandomOperator {
    ops: Vec<HSOperator>,
    weights: Vec<f64>,
    rule: BranchRule,
}

impl fmt::Debug for SimpleRandomOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimpleRandomOperator")
            .field("weights", &self.weights)
            .field(
                "rule",
                &match self.rule {
                    BranchRule::Draw => "draw",
                    BranchRule::Select(_) => "select",
                },
            )
            .field("ops", &self.ops)
            .finish()
    }
}

impl SimpleRandomOperator {
    pub fn deterministic(op: HSOperator) -> Self {
        Self {
            ops: vec![op],
            weights: vec![1.0],
            rule: BranchRule::Draw,
        }
    }

    pub fn weighted(branches: Vec<(f64, HSOperator)>) -> Result<Self> {
        let (weights, ops) = branches.into_iter().unzip();
        Self::validated(ops, weights, BranchRule::Draw)
    }

    pub fn selected(ops: Vec<HSOperator>, weights: Vec<f64>, selector: Selector) -> Result<Self> {
        Self::validated(ops, weights, BranchRule::Select(selector))
    }

    fn validated(ops: Vec<HSOperator>, weights: Vec<f64>, rule: BranchRule) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::InvalidInput("a random operator needs at least one branch".into()));
        }
        check_shape("branch weight count", ops.len(), weights.len())?;
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidInput(format!("branch weight {w} outside [0, 1]")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidInput(format!("branch weights sum to {total}, not 1")));
        }
        for op in &ops[1..] {
            check_shape("branch operator rows", ops[0].rows(), op.rows())?;
            check_shape("branch operator cols", ops[0].cols(), op.cols())?;
        }
        Ok(Self { ops, weights, rule })
    }

    pub fn ops(&self) -> &[HSOperator] {
        &self.ops
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn branches(&self) -> impl Iterator<Item = (f64, &HSOperator)> {
        self.weights.iter().copied().zip(&self.ops)
    }

    pub fn rows(&self) -> usize {
        self.ops[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.ops[0].cols()
    }

    pub fn is_selected(&self) -> bool {
        matches!(self.rule, BranchRule::Select(_))
    }

    /// `||Phi||_S^2 = sum_i P(A_i) ||phi_i||_HS^2`.
    pub fn expected_hs_norm_sq(&self) -> f64 {
        self.branches().map(|(w, op)| w * op.hs_norm_sq()).sum()
    }

    /// Applies `f` to every branch operator, keeping weights and rule.
    pub fn map_ops(&self, f: impl Fn(&HSOperator) -> HSOperator) -> Self {
        Self {
            ops: self.ops.iter().map(f).collect(),
            weights: self.weights.clone(),
            rule: self.rule.clone(),
        }
    }

    /// Branch-wise `a * self + b * other`; the result keeps `self`'s law.
    pub fn lin_comb(&self, a: f64, other: &SimpleRandomOperator, b: f64) -> Result<Self> {
        check_shape("branch count", self.ops.len(), other.ops.len())?;
        let ops = self
            .ops
            .iter()
            .zip(&other.ops)
            .map(|(x, y)| x.lin_comb(a, y, b))
            .collect::<Result<_>>()?;
        Ok(Self {
            ops,
            weights: self.weights.clone(),
            rule: self.rule.clone(),
        })
    }

    /// Realizes the branch index before the increment is drawn.
    ///
    /// Every call consumes exactly one uniform from `rng`, whatever the rule,
    /// so integrands sharing a grid stay coupled draw for draw.
    pub fn realize_branch<R: Rng + ?Sized>(&self, history: &History<'_>, rng: &mut R) -> Result<usize> {
        let u: f64 = rng.random();
        let branch = match &self.rule {
            BranchRule::Draw => {
                let mut acc = 0.0;
                let mut pick = self.ops.len() - 1;
                for (i, w) in self.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
            BranchRule::Select(selector) => selector(history),
        };
        self.check_branch(branch)?;
        Ok(branch)
    }

    fn check_branch(&self, branch: usize) -> Result<()> {
        if branch < self.ops.len() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "branch {branch} out of range for {} branches",
                self.ops.len()
            )))
        }
    }
}

/// A realized `J(Phi)` together with the branch that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonifiedSample {
    pub value: HVector,
    pub branch: usize,
}

/// `J(phi) = phi delta`, the `V`-valued variable with
/// `<J(phi), v> = (Delta L)(phi^* v)`.
pub fn radonify(op: &HSOperator, increment: &IncrementSample) -> Result<HVector> {
    op.apply(&increment.coords)
}

/// `J(Phi)` on the event that branch `branch` was realized.
pub fn radonify_simple(
    op: &SimpleRandomOperator,
    increment: &IncrementSample,
    branch: usize,
) -> Result<RadonifiedSample> {
    op.check_branch(branch)?;
    Ok(RadonifiedSample {
        value: radonify(&op.ops[branch], increment)?,
        branch,
    })
}

/// Exact `E||J(Phi)||^2` over an interval of length `dt`:
/// `sum_i w_i (dt tr(phi_i C phi_i^T) + dt^2 ||phi_i p~||^2)` with
/// `C = Q + diag(lambda m2)`.
pub fn radonified_second_moment(
    law: &CylindricalCharacteristics,
    op: &SimpleRandomOperator,
    dt: f64,
) -> Result<f64> {
    check_shape("operator domain dimension", law.dim(), op.cols())?;
    let cov = law.total_cov();
    op.branches()
        .map(|(w, phi)| {
            let trace = phi.compose(&cov)?.hs_inner(phi)?;
            let mean = phi.apply(law.drift())?.norm_sq();
            Ok(w * (dt * trace + dt * dt * mean))
        })
        .sum()
}

fn sample_radonified(
    law: &CylindricalCharacteristics,
    op: &SimpleRandomOperator,
    dt: f64,
    stream: RngStream,
) -> Result<RadonifiedSample> {
    let branch = op.realize_branch(&History::empty(), &mut stream.branch())?;
    let increment = sample_increment(law, dt, &mut stream.noise())?;
    radonify_simple(op, &increment, branch)
}

/// Monte Carlo check of `E||J(Phi)||^2 <= ||L(dt)||^2 ||Phi||_S^2`.
pub fn verify_radonification_bound(
    law: &CylindricalCharacteristics,
    op: &SimpleRandomOperator,
    dt: f64,
    mc: McConfig,
) -> Result<CheckRecord> {
    mc.require_replicas(1000)?;
    check_shape("operator domain dimension", law.dim(), op.cols())?;
    let rhs = law.operator_norm_sq(dt)? * op.expected_hs_norm_sq();
    let lhs = fanout(mc.replicas, mc.workers, |r| {
        Ok(sample_radonified(law, op, dt, RngStream::new(mc.seed, r))?
            .value
            .norm_sq())
    })?;
    Ok(CheckRecord::new(
        "radonification_bound",
        lhs,
        rhs,
        ToleranceRule::AtMostBoundPlusStdErrors { k: 3.0 },
    ))
}

/// Monte Carlo check of the conditioning identity
/// `E|<J(Phi), v>|^2 = sum_i w_i E|(Delta L)(phi_i^* v)|^2`.
pub fn verify_mixture_identity(
    law: &CylindricalCharacteristics,
    op: &SimpleRandomOperator,
    dt: f64,
    v: &HVector,
    mc: McConfig,
) -> Result<CheckRecord> {
    mc.require_replicas(1000)?;
    check_shape("operator domain dimension", law.dim(), op.cols())?;
    let rhs = op
        .branches()
        .map(|(w, phi)| Ok(w * law.second_moment(&phi.adjoint().apply(v)?, dt)?))
        .sum::<Result<f64>>()?;
    let lhs = fanout(mc.replicas, mc.workers, |r| {
        let sample = sample_radonified(law, op, dt, RngStream::new(mc.seed, r))?;
        Ok(sample.value.inner(v)?.powi(2))
    })?;
    Ok(CheckRecord::new(
        "mixture_identity",
        lhs,
        rhs,
        ToleranceRule::WithinStdErrors { k: 3.0 },
    ))
}
