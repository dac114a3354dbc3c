//! Dense linear algebra helpers shared across the crate.
//!
//! Everything here is deliberately dense: instances stay at desk scale
//! (dimensions up to a few thousand), so factorizations and symmetric
//! eigensolves are cheap and deterministic.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative pivot threshold below which an SPD factorization is rejected.
pub const SPD_PIVOT_RTOL: f64 = 1e-14;

/// Cholesky factorization of a symmetric positive-definite matrix with an
/// explicit singularity threshold: the factorization is rejected when the
/// smallest pivot falls below `SPD_PIVOT_RTOL` times the largest diagonal
/// entry of the input.
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::DimensionMismatch {
                what: "SpdFactor (square matrix)",
                expected: n,
                got: a.ncols(),
            });
        }
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        let chol = nalgebra::Cholesky::new(a.clone())
            .ok_or_else(|| Error::Conditioning("Cholesky factorization failed".into()))?;
        // The pivots of LL^T are the squared diagonal entries of L.
        let min_pivot = (0..n)
            .map(|i| {
                let l = chol.l_dirty()[(i, i)];
                l * l
            })
            .fold(f64::INFINITY, f64::min);
        if !min_pivot.is_finite() || min_pivot < SPD_PIVOT_RTOL * max_diag {
            return Err(Error::Conditioning(format!(
                "smallest pivot {min_pivot:.3e} below {SPD_PIVOT_RTOL:.0e} * max diagonal {max_diag:.3e}"
            )));
        }
        Ok(SpdFactor { chol })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }
}

/// One-shot SPD solve of `a x = rhs`.
pub fn spd_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(SpdFactor::new(a)?.solve(rhs))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eig(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eig(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Operator (spectral) norm of a symmetric matrix.
pub fn sym_op_norm(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

/// Operator norm of a general rectangular matrix (largest singular value),
/// computed from the symmetric eigendecomposition of `AᵀA`.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    let gram = a.transpose() * a;
    sym_max_eig(&gram).max(0.0).sqrt()
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix,
/// with the sign convention fixed so the result is deterministic in the RNG.
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let gauss = DMatrix::from_fn(n, n, |_, _| standard_normal(rng));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Standard normal draw via Box-Muller (avoids a distribution dependency).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gaussian vector with i.i.d. standard normal entries.
pub fn gaussian_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| standard_normal(rng))
}

/// Uniform draw from the Euclidean ball of the given radius.
pub fn ball_uniform<R: Rng>(n: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let mut dir = gaussian_vector(n, rng);
    let norm = dir.norm();
    if norm > 0.0 {
        dir /= norm;
    }
    let u: f64 = rng.gen();
    dir * (radius * u.powf(1.0 / n as f64))
}

pub fn check_finite(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn check_dim(v: &DVector<f64>, expected: usize, what: &'static str) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got: v.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn spd_solve_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 8;
            let m = DMatrix::from_fn(n, n, |_, _| standard_normal(&mut rng));
            let a = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
            let b = gaussian_vector(n, &mut rng);
            let x = spd_solve(&a, &b).unwrap();
            let res = (&a * &x - &b).norm();
            assert!(res <= 1e-10 * (1.0 + b.norm()), "residual {res}");
        }
    }

    #[test]
    fn spd_solve_rejects_singular() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(
            spd_solve(&a, &DVector::zeros(2)),
            Err(Error::Conditioning(_))
        ));
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(12, &mut rng);
        let err = (&q.transpose() * &q - DMatrix::identity(12, 12)).norm();
        assert!(err < 1e-12, "orthogonality defect {err}");
    }

    #[test]
    fn ball_uniform_within_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let v = ball_uniform(5, 0.3, &mut rng);
            assert!(v.norm() <= 0.3 + 1e-12);
        }
    }
}
