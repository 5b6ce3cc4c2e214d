//! Shared fixtures for the criterion benches.

use cylint_core::{CylindricalCharacteristics, HSOperator, HVector, JumpComponent, Space};

/// Gaussian part `diag(1/k)` plus two-point jumps on every coordinate.
pub fn mixed_law(n: usize) -> CylindricalCharacteristics {
    let diag: Vec<f64> = (1..=n).map(|k| 1.0 / k as f64).collect();
    CylindricalCharacteristics::new(
        HVector::zeros(Space::U, n),
        HSOperator::diag(&diag).expect("non-empty diagonal"),
        vec![JumpComponent::two_point(2.0, 0.5).expect("valid jump law"); n],
    )
    .expect("valid characteristics")
}

/// Dense `n x n` operator with decaying entries.
pub fn dense_operator(n: usize) -> HSOperator {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 1.0 / (1.0 + (i + j) as f64)).collect())
        .collect();
    HSOperator::from_rows(&rows).expect("square rows")
}
