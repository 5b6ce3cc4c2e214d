//! Spectrally truncated Hilbert spaces and Hilbert-Schmidt operators.
//!
//! An element of `U` or `V` is stored through its first `N` coefficients
//! against a fixed orthonormal basis, so inner products and norms are the
//! Euclidean ones. A Hilbert-Schmidt operator `U -> V` is the dense row-major
//! matrix with entry `(j, k) = <phi e_k, f_j>`, and its Hilbert-Schmidt norm is
//! the Frobenius norm of that matrix.

use crate::error::{check_shape, Error, Result};

/// Which of the two truncated spaces a vector lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    U,
    V,
}

/// Coefficient vector of an element of a truncated Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct HVector {
    coords: Vec<f64>,
    space: Space,
}

impl HVector {
    pub fn new(space: Space, coords: Vec<f64>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "coefficient {i} of vector is not finite"
            )));
        }
        Ok(Self { coords, space })
    }

    /// Builds an element of `U`.
    pub fn in_u(coords: Vec<f64>) -> Result<Self> {
        Self::new(Space::U, coords)
    }

    /// Builds an element of `V`.
    pub fn in_v(coords: Vec<f64>) -> Result<Self> {
        Self::new(Space::V, coords)
    }

    pub fn zeros(space: Space, dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
            space,
        }
    }

    /// The `k`-th basis vector (zero-based).
    pub fn basis(space: Space, dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::InvalidInput(format!(
                "basis index {k} out of range for dimension {dim}"
            )));
        }
        let mut v = Self::zeros(space, dim);
        v.coords[k] = 1.0;
        Ok(v)
    }

    pub(crate) fn from_raw(space: Space, coords: Vec<f64>) -> Self {
        Self { coords, space }
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn norm_sq(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0.0)
    }

    pub fn inner(&self, other: &HVector) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(dot(&self.coords, &other.coords))
    }

    pub fn scaled(&self, c: f64) -> HVector {
        HVector::from_raw(self.space, self.coords.iter().map(|x| c * x).collect())
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &HVector, b: f64) -> Result<HVector> {
        self.check_compatible(other)?;
        Ok(HVector::from_raw(
            self.space,
            self.coords
                .iter()
                .zip(&other.coords)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    pub fn add(&self, other: &HVector) -> Result<HVector> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &HVector) -> Result<HVector> {
        self.lin_comb(1.0, other, -1.0)
    }

    fn check_compatible(&self, other: &HVector) -> Result<()> {
        if self.space != other.space {
            return Err(Error::InvalidInput(format!(
                "vectors live in different spaces ({:?} vs {:?})",
                self.space, other.space
            )));
        }
        check_shape("vector dimension", self.dim(), other.dim())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense Hilbert-Schmidt operator between truncated spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct HSOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    domain: Space,
    codomain: Space,
}

impl HSOperator {
    /// Operator `U -> V` from row-major entries; `rows = N_V`, `cols = N_U`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_shape("operator entry count", rows * cols, data.len())?;
        if let Some(i) = data.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "operator entry ({}, {}) is not finite",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            domain: Space::U,
            codomain: Space::V,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            check_shape("operator row length", n_cols, row.len())?;
            data.extend_from_slice(row);
        }
        Self::from_row_major(n_rows, n_cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            domain: Space::U,
            codomain: Space::V,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let mut op = Self::zeros(n, n);
        for k in 0..n {
            op.data[k * n + k] = c;
        }
        op
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (k, v) in values.iter().enumerate() {
            data[k * n + k] = *v;
        }
        Self::from_row_major(n, n, data)
    }

    /// The rank-one operator `u -> <u, e_col> f_row`.
    pub fn rank_one(rows: usize, cols: usize, row: usize, col: usize) -> Result<Self> {
        if row >= rows || col >= cols {
            return Err(Error::InvalidInput(format!(
                "rank-one index ({row}, {col}) outside {rows}x{cols}"
            )));
        }
        let mut op = Self::zeros(rows, cols);
        op.data[row * cols + col] = 1.0;
        Ok(op)
    }

    /// Re-tags domain and codomain, e.g. for operators `V -> V`.
    pub fn with_spaces(mut self, domain: Space, codomain: Space) -> Self {
        self.domain = domain;
        self.codomain = codomain;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn domain(&self) -> Space {
        self.domain
    }

    pub fn codomain(&self) -> Space {
        self.codomain
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn hs_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_norm_sq().sqrt()
    }

    pub fn hs_inner(&self, other: &HSOperator) -> Result<f64> {
        check_shape("operator rows", self.rows, other.rows)?;
        check_shape("operator cols", self.cols, other.cols)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn apply(&self, u: &HVector) -> Result<HVector> {
        if u.space() != self.domain {
            return Err(Error::InvalidInput(format!(
                "operator acts on {:?}, got a vector in {:?}",
                self.domain,
                u.space()
            )));
        }
        check_shape("operator domain dimension", self.cols, u.dim())?;
        let mut out = vec![0.0; self.rows];
        self.apply_into(u.coords(), &mut out);
        Ok(HVector::from_raw(self.codomain, out))
    }

    /// Unchecked matrix-vector product on raw coefficients.
    pub(crate) fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (row, o) in self.data.chunks_exact(self.cols.max(1)).zip(out.iter_mut()) {
            *o = dot(row, u);
        }
        if self.cols == 0 {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
    }

    /// Column `k`, i.e. the image of the `k`-th basis vector.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|j| self.entry(j, k)).collect()
    }

    pub fn adjoint(&self) -> HSOperator {
        let mut data = vec![0.0; self.data.len()];
        for j in 0..self.rows {
            for k in 0..self.cols {
                data[k * self.rows + j] = self.data[j * self.cols + k];
            }
        }
        HSOperator {
            rows: self.cols,
            cols: self.rows,
            data,
            domain: self.codomain,
            codomain: self.domain,
        }
    }

    pub fn scaled(&self, c: f64) -> HSOperator {
        HSOperator {
            data: self.data.iter().map(|x| c * x).collect(),
            ..self.clone()
        }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &HSOperator, b: f64) -> Result<HSOperator> {
        check_shape("operator rows", self.rows, other.rows)?;
        check_shape("operator cols", self.cols, other.cols)?;
        Ok(HSOperator {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            ..self.clone()
        })
    }

    /// The composition `self ∘ inner`.
    pub fn compose(&self, inner: &HSOperator) -> Result<HSOperator> {
        check_shape("composition inner dimension", self.cols, inner.rows)?;
        let (m, n, p) = (self.rows, self.cols, inner.cols);
        let mut data = vec![0.0; m * p];
        for i in 0..m {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let row = &inner.data[k * p..(k + 1) * p];
                for (d, b) in data[i * p..(i + 1) * p].iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(HSOperator {
            rows: m,
            cols: p,
            data,
            domain: inner.domain,
            codomain: self.codomain,
        })
    }

    /// Spectral norm via power iteration on `phi^* phi`.
    pub fn operator_norm(&self) -> Result<f64> {
        let gram = self.adjoint().compose(self)?;
        Ok(largest_eigenvalue_psd(&gram.data, gram.rows)?.sqrt())
    }
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

/// Largest eigenvalue of a symmetric positive-semidefinite row-major matrix.
///
/// Power iteration from a fixed dense start vector; converged once the
/// Rayleigh quotient changes by less than `1e-10` relative.
pub(crate) fn largest_eigenvalue_psd(matrix: &[f64], n: usize) -> Result<f64> {
    if n == 0 || matrix.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    // Irrational-ish weights keep the start vector off every coordinate
    // hyperplane of the test fixtures.
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.754_877_666).fract())
        .collect();
    normalize(&mut x);
    let mut y = vec![0.0; n];
    let mut lambda = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(&matrix[i * n..(i + 1) * n], &x);
        }
        let next = dot(&x, &y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        if (next - lambda).abs() <= POWER_TOL * next.abs() {
            return Ok(next.max(0.0));
        }
        lambda = next;
        x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi = yi / norm);
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge in {POWER_MAX_ITER} steps"
    )))
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= n);
}
