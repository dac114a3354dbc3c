//! Finite-difference oracles, independent of every analytic gradient path
//! they are used to check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default gradient step: `h = 1e−5 (1 + ‖x‖)`.
pub fn default_grad_step(x: &DVector<f64>) -> f64 {
    1e-5 * (1.0 + x.norm())
}

/// Default Hessian step: `h = 1e−4 (1 + ‖x‖)`.
pub fn default_hess_step(x: &DVector<f64>) -> f64 {
    1e-4 * (1.0 + x.norm())
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(
    f: impl Fn(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    assert!(h > 0.0);
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut xp = x.clone();
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("fd_gradient function value"));
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Dense second-order central-difference Hessian (symmetrized).
pub fn dense_hessian(
    f: impl Fn(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    assert!(h > 0.0);
    let n = x.len();
    let mut m = DMatrix::zeros(n, n);
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::NonFinite("dense_hessian function value"));
    }
    let mut xp = x.clone();
    // diagonal
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        m[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
    }
    // off-diagonal
    for i in 0..n {
        for j in i + 1..n {
            xp[i] = x[i] + h;
            xp[j] = x[j] + h;
            let fpp = f(&xp);
            xp[j] = x[j] - h;
            let fpm = f(&xp);
            xp[i] = x[i] - h;
            xp[j] = x[j] + h;
            let fmp = f(&xp);
            xp[j] = x[j] - h;
            let fmm = f(&xp);
            xp[i] = x[i];
            xp[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dense_hessian entries"));
    }
    Ok(m)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    crate::linalg::sym_min_eig(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_of_norm_squared() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let g = fd_gradient(|v| 0.5 * v.norm_squared(), &x, 1e-5).unwrap();
        assert!((g - &x).norm() <= 1e-9);
    }

    #[test]
    fn hessian_of_quadratic_recovers_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = {
            let m = DMatrix::from_fn(4, 4, |_, _| linalg::standard_normal(&mut rng));
            (&m + m.transpose()) * 0.5
        };
        let x = linalg::gaussian_vector(4, &mut rng);
        let h = dense_hessian(|v| 0.5 * v.dot(&(&a * v)), &x, 1e-4).unwrap();
        assert!((h - &a).norm() <= 1e-6 * (1.0 + a.norm()));
    }

    #[test]
    fn richardson_halving_quarters_error() {
        // smooth non-polynomial test function
        let f = |v: &DVector<f64>| (v[0]).sin() * (v[1]).exp();
        let x = DVector::from_vec(vec![0.7, -0.3]);
        let exact = DVector::from_vec(vec![x[0].cos() * x[1].exp(), x[0].sin() * x[1].exp()]);
        let e1 = (fd_gradient(f, &x, 1e-3).unwrap() - &exact).norm();
        let e2 = (fd_gradient(f, &x, 5e-4).unwrap() - &exact).norm();
        let ratio = e1 / e2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "halving h should quarter the error, ratio {ratio}"
        );
    }

    #[test]
    fn nonfinite_values_error() {
        let x = DVector::zeros(2);
        assert!(matches!(
            fd_gradient(|v| 1.0 / v[0], &x, 1e-5),
            Err(Error::NonFinite(_))
        ));
    }
}
