//! Cylindrical characteristics `(p~, Q, nu)` of a cylindrical Levy process
//! with weak second moments, realized on a truncated space `U`.
//!
//! The jump part is diagonal: coordinate `k` carries an independent compound
//! Poisson process with rate `lambda_k` and jump law `jump_dist_k`, fully
//! compensated. Hence `int <u,a>^2 nu(da) = sum_k lambda_k m2_k u_k^2`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{check_shape, Error, Result};
use crate::hilbert::{dot, largest_eigenvalue_psd, HSOperator, HVector, Space};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Law of a single jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpDist {
    /// Jumps of size `+a` or `-a` with probability one half each.
    TwoPoint { a: f64 },
    /// Centred Gaussian jumps with standard deviation `sigma`.
    Gaussian { sigma: f64 },
}

impl JumpDist {
    pub fn mean(&self) -> f64 {
        0.0
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            JumpDist::TwoPoint { a } => a * a,
            JumpDist::Gaussian { sigma } => sigma * sigma,
        }
    }

    /// Characteristic function `E[exp(i theta beta)]`; real for both laws.
    pub fn char_fn(&self, theta: f64) -> f64 {
        match *self {
            JumpDist::TwoPoint { a } => (a * theta).cos(),
            JumpDist::Gaussian { sigma } => (-0.5 * sigma * sigma * theta * theta).exp(),
        }
    }
}

/// One-dimensional jump component along a basis direction `e_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpComponent {
    pub rate: f64,
    pub dist: JumpDist,
}

impl JumpComponent {
    pub fn new(rate: f64, dist: JumpDist) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "jump rate must be finite and non-negative, got {rate}"
            )));
        }
        match dist {
            JumpDist::TwoPoint { a } if !a.is_finite() => {
                return Err(Error::InvalidInput(format!("two-point jump size {a}")))
            }
            JumpDist::Gaussian { sigma } if !(sigma.is_finite() && sigma > 0.0) => {
                return Err(Error::InvalidInput(format!(
                    "gaussian jump sigma must be positive, got {sigma}"
                )))
            }
            _ => {}
        }
        Ok(Self { rate, dist })
    }

    /// No jumps at all.
    pub fn none() -> Self {
        Self {
            rate: 0.0,
            dist: JumpDist::TwoPoint { a: 0.0 },
        }
    }

    pub fn two_point(rate: f64, a: f64) -> Result<Self> {
        Self::new(rate, JumpDist::TwoPoint { a })
    }

    pub fn gaussian(rate: f64, sigma: f64) -> Result<Self> {
        Self::new(rate, JumpDist::Gaussian { sigma })
    }

    /// `lambda_k * m2_k`, the jump contribution to the variance per unit time.
    pub fn variance_rate(&self) -> f64 {
        self.rate * self.dist.second_moment()
    }

    pub fn is_active(&self) -> bool {
        self.variance_rate() > 0.0
    }
}

/// The triplet `(p~, Q, nu)` plus cached factorizations of `Q`.
#[derive(Debug, Clone)]
pub struct CylindricalCharacteristics {
    drift: HVector,
    cov: HSOperator,
    jumps: Vec<JumpComponent>,
    cov_sqrt: HSOperator,
    gaussian_free: bool,
}

impl CylindricalCharacteristics {
    pub fn new(drift: HVector, cov: HSOperator, jumps: Vec<JumpComponent>) -> Result<Self> {
        let n = drift.dim();
        if drift.space() != Space::U {
            return Err(Error::InvalidInput("drift must be a vector in U".into()));
        }
        check_shape("covariance rows", n, cov.rows())?;
        check_shape("covariance cols", n, cov.cols())?;
        check_shape("jump component count", n, jumps.len())?;
        for j in 0..n {
            for k in (j + 1)..n {
                let (a, b) = (cov.entry(j, k), cov.entry(k, j));
                if (a - b).abs() > SYMMETRY_TOL * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidInput(format!(
                        "covariance is not symmetric at ({j}, {k}): {a} vs {b}"
                    )));
                }
            }
        }
        let cov_sqrt = psd_sqrt(&cov)?;
        let gaussian_free = cov.data().iter().all(|&x| x == 0.0);
        Ok(Self {
            drift,
            cov: cov.with_spaces(Space::U, Space::U),
            jumps,
            cov_sqrt,
            gaussian_free,
        })
    }

    /// Isotropic Gaussian noise `Q = Id_n`, no drift, no jumps.
    pub fn standard_gaussian(n: usize) -> Self {
        Self::new(
            HVector::zeros(Space::U, n),
            HSOperator::identity(n),
            vec![JumpComponent::none(); n],
        )
        .expect("identity covariance is valid")
    }

    pub fn zero(n: usize) -> Self {
        Self::new(
            HVector::zeros(Space::U, n),
            HSOperator::zeros(n, n),
            vec![JumpComponent::none(); n],
        )
        .expect("zero characteristics are valid")
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn drift(&self) -> &HVector {
        &self.drift
    }

    pub fn cov(&self) -> &HSOperator {
        &self.cov
    }

    pub fn jumps(&self) -> &[JumpComponent] {
        &self.jumps
    }

    /// Symmetric PSD square root of `Q` (eigenvalues clamped at zero).
    pub fn cov_sqrt(&self) -> &HSOperator {
        &self.cov_sqrt
    }

    pub(crate) fn is_gaussian_free(&self) -> bool {
        self.gaussian_free
    }

    pub fn is_martingale(&self) -> bool {
        self.drift.is_zero()
    }

    /// Same `Q` and `nu` with the drift removed.
    pub fn martingale_part(&self) -> Self {
        Self {
            drift: HVector::zeros(Space::U, self.dim()),
            ..self.clone()
        }
    }

    /// Diagonal of `Q + diag(lambda m2)`: per-coordinate variance rate.
    pub fn coordinate_variance_rates(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.cov.entry(k, k) + self.jumps[k].variance_rate())
            .collect()
    }

    /// Covariance rate `Q + diag(lambda m2)` of the martingale part.
    pub fn total_cov(&self) -> HSOperator {
        let n = self.dim();
        let mut data = self.cov.data().to_vec();
        for (k, jump) in self.jumps.iter().enumerate() {
            data[k * n + k] += jump.variance_rate();
        }
        HSOperator::from_row_major(n, n, data)
            .expect("sum of finite entries is finite")
            .with_spaces(Space::U, Space::U)
    }

    /// `E|L(t)u|^2 = t (u^T Q u + sum_k lambda_k m2_k u_k^2) + (t p~.u)^2`.
    pub fn second_moment(&self, u: &HVector, t: f64) -> Result<f64> {
        check_time(t)?;
        self.check_u(u)?;
        let mean = t * self.drift.inner(u)?;
        Ok(t * self.quadratic_rate(u.coords()) + mean * mean)
    }

    /// Variance per unit time of `L(1)u`: `q(u) + int <u,a>^2 nu(da)`.
    pub(crate) fn quadratic_rate(&self, u: &[f64]) -> f64 {
        let n = self.dim();
        let mut qu = 0.0;
        for j in 0..n {
            qu += u[j] * dot(&self.cov.data()[j * n..(j + 1) * n], u);
        }
        let jumps: f64 = self
            .jumps
            .iter()
            .zip(u)
            .map(|(c, uk)| c.variance_rate() * uk * uk)
            .sum();
        qu + jumps
    }

    /// Characteristic function `E[exp(i L(t)u)]`.
    pub fn char_function(&self, u: &HVector, t: f64) -> Result<Complex64> {
        check_time(t)?;
        self.check_u(u)?;
        let uc = u.coords();
        let n = self.dim();
        let mut qu = 0.0;
        for j in 0..n {
            qu += uc[j] * dot(&self.cov.data()[j * n..(j + 1) * n], uc);
        }
        let mut re = -0.5 * qu;
        let mut im = self.drift.inner(u)?;
        for (c, &uk) in self.jumps.iter().zip(uc) {
            if c.rate > 0.0 {
                re += c.rate * (c.dist.char_fn(uk) - 1.0);
                im -= c.rate * uk * c.dist.mean();
            }
        }
        Ok((Complex64::new(re, im) * t).exp())
    }

    /// `||L(t)||^2` as an operator `U -> L^2(P)`: the largest eigenvalue of
    /// `t (Q + diag(lambda m2)) + t^2 p~ p~^T`.
    pub fn operator_norm_sq(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidInput(format!(
                "operator norm needs t > 0, got {t}"
            )));
        }
        let n = self.dim();
        let p = self.drift.coords();
        let mut m = self.total_cov().data().to_vec();
        for j in 0..n {
            for k in 0..n {
                m[j * n + k] = t * m[j * n + k] + t * t * p[j] * p[k];
            }
        }
        largest_eigenvalue_psd(&m, n)
    }

    /// Integrand of the Ito isometry at a fixed operator `psi: U -> V`:
    /// `||Q^{1/2} psi^*||_HS^2 + sum_k lambda_k m2_k ||psi e_k||^2`.
    ///
    /// The drift does not enter.
    pub fn ito_weight(&self, psi: &HSOperator) -> Result<f64> {
        check_shape("integrand domain dimension", self.dim(), psi.cols())?;
        let gaussian = self.cov_sqrt.compose(&psi.adjoint())?.hs_norm_sq();
        let jumps: f64 = self
            .jumps
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_active())
            .map(|(k, c)| c.variance_rate() * psi.column(k).iter().map(|x| x * x).sum::<f64>())
            .sum();
        Ok(gaussian + jumps)
    }

    fn check_u(&self, u: &HVector) -> Result<()> {
        if u.space() != Space::U {
            return Err(Error::InvalidInput(
                "test vectors for L must lie in U".into(),
            ));
        }
        check_shape("test vector dimension", self.dim(), u.dim())
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "time must be finite and non-negative, got {t}"
        )))
    }
}

/// Symmetric PSD square root via eigendecomposition, clamping tiny negative
/// eigenvalues to zero.
fn psd_sqrt(cov: &HSOperator) -> Result<HSOperator> {
    let n = cov.rows();
    if n == 0 {
        return Ok(HSOperator::zeros(0, 0).with_spaces(Space::U, Space::U));
    }
    let m = DMatrix::from_row_slice(n, n, cov.data());
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("eigendecomposition of Q failed".into()))?;
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, l| a.max(l.abs()));
    if let Some(min) = eig.eigenvalues.iter().copied().reduce(f64::min) {
        if min < -PSD_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "covariance is not positive semidefinite (eigenvalue {min})"
            )));
        }
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    let data: Vec<f64> = (0..n)
        .flat_map(|j| (0..n).map(move |k| (j, k)))
        .map(|(j, k)| 0.5 * (sqrt[(j, k)] + sqrt[(k, j)]))
        .collect();
    Ok(HSOperator::from_row_major(n, n, data)?.with_spaces(Space::U, Space::U))
}
