//! Coupling coefficients `(a_K, b_K)` of the chain instance.
//!
//! With `B = (I_K/K² + A_K)⁻¹`, the choices `a_K = (1 − B₁₁/B₁K)/K` and
//! `b_K = K/B₁K` make the composed lower-level solution collapse the
//! coupling term to `K³/2 · Σ (x_i − x_{i+1})²`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::SpdFactor;

/// Tridiagonal chain matrix `A_K` (1, 2, …, 2, 1 diagonal; −1 off-diagonal).
pub fn tridiag_a(k: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        a[(i, i)] = if i == 0 || i == k - 1 { 1.0 } else { 2.0 };
        if i + 1 < k {
            a[(i, i + 1)] = -1.0;
            a[(i + 1, i)] = -1.0;
        }
    }
    a
}

/// `I_K/K² + A_K`, the Hessian of one lower-level sub-chain.
pub fn subchain_matrix(k: usize) -> DMatrix<f64> {
    let mut m = tridiag_a(k);
    let shift = 1.0 / (k * k) as f64;
    for i in 0..k {
        m[(i, i)] += shift;
    }
    m
}

/// First row `B₁,·` of `B = (I/K² + A_K)⁻¹`, via one dense SPD solve.
pub fn b_first_row(k: usize) -> Result<DVector<f64>> {
    let m = subchain_matrix(k);
    let mut e1 = DVector::zeros(k);
    e1[0] = 1.0;
    // B is symmetric, so the first column equals the first row.
    Ok(SpdFactor::new(&m)?.solve(&e1))
}

/// The pair `(a_K, b_K)`.
pub fn ab_coefficients(k: usize) -> Result<(f64, f64)> {
    let row = b_first_row(k)?;
    let b11 = row[0];
    let b1k = row[k - 1];
    Ok(((1.0 - b11 / b1k) / k as f64, k as f64 / b1k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_values_for_k10() {
        // Fixed ahead of the build by a dense inverse of (I/100 + A_10).
        let (a, b) = ab_coefficients(10).unwrap();
        assert!((a - (-4.839_369_705_561_924e-2)).abs() < 1e-13, "a_10 = {a}");
        assert!((b - 1.173_093_615_706_113_8).abs() < 1e-12, "b_10 = {b}");
    }

    #[test]
    fn coefficient_bounds() {
        for k in [10usize, 20, 50, 100] {
            let (a, b) = ab_coefficients(k).unwrap();
            assert!(a.abs() <= 20.0);
            assert!(b.abs() <= 10.0);
        }
    }

    #[test]
    fn first_row_bounds() {
        for k in [10usize, 50, 200] {
            let row = b_first_row(k).unwrap();
            for (i, v) in row.iter().enumerate() {
                assert!(
                    *v >= 0.1 * k as f64 && *v <= 20.0 * k as f64,
                    "K={k}: B_1,{} = {v} out of [0.1K, 20K]",
                    i + 1
                );
            }
        }
    }
}
