//! Inner solvers for smooth strongly convex subproblems.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Parameters of accelerated gradient descent on an `L`-smooth,
/// `mu`-strongly-convex objective.
#[derive(Debug, Clone, Copy)]
pub struct AgdConfig {
    pub l: f64,
    pub mu: f64,
    pub k: usize,
}

impl AgdConfig {
    pub fn new(l: f64, mu: f64, k: usize) -> Self {
        debug_assert!(l >= mu && mu > 0.0, "need L >= mu > 0");
        AgdConfig { l, mu, k }
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    /// Contraction factor `(1 + kappa)(1 − 1/sqrt(kappa))^K` on the squared
    /// distance to the minimizer.
    pub fn contraction(&self) -> f64 {
        let kappa = self.kappa();
        (1.0 + kappa) * (1.0 - 1.0 / kappa.sqrt()).powi(self.k as i32)
    }
}

/// Smallest iteration count whose contraction factor reaches `gamma`.
pub fn k_for_contraction(kappa: f64, gamma: f64) -> usize {
    if kappa <= 1.0 {
        return 1;
    }
    let rate = (1.0 - 1.0 / kappa.sqrt()).ln();
    let k = ((gamma / (1.0 + kappa)).ln() / rate).ceil();
    (k.max(1.0)) as usize
}

/// Nesterov's accelerated gradient descent with constant momentum
/// `(√kappa − 1)/(√kappa + 1)`; returns the iterate after `K` steps.
pub fn agd(
    mut grad: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    cfg: &AgdConfig,
    z0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let kappa = cfg.kappa();
    let momentum = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
    let step = 1.0 / cfg.l;
    let mut z = z0.clone();
    let mut z_tilde = z0.clone();
    for k in 0..cfg.k {
        let g = grad(&z_tilde)?;
        let z_next = &z_tilde - step * g;
        if !z_next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                solver: "agd",
                step: k,
            });
        }
        z_tilde = &z_next + momentum * (&z_next - &z);
        z = z_next;
    }
    Ok(z)
}

/// Plain gradient descent with step `1/L`.
pub fn gd(
    mut grad: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    l: f64,
    k: usize,
    z0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let step = 1.0 / l;
    let mut z = z0.clone();
    for i in 0..k {
        let g = grad(&z)?;
        z -= step * g;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                solver: "gd",
                step: i,
            });
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SpdQuadratic;

    #[test]
    fn zero_iterations_returns_start() {
        let z0 = DVector::from_vec(vec![1.0, 2.0]);
        let cfg = AgdConfig::new(1.0, 1.0, 0);
        let z = agd(|z| Ok(z.clone()), &cfg, &z0).unwrap();
        assert_eq!(z, z0);
        let z = gd(|z| Ok(z.clone()), 1.0, 0, &z0).unwrap();
        assert_eq!(z, z0);
    }

    #[test]
    fn one_step_solves_identity_quadratic() {
        // h = ½‖z‖², L = mu = 1: momentum 0, z1 = z0 − z0 = 0 exactly.
        let z0 = DVector::from_vec(vec![3.0, -4.0]);
        let cfg = AgdConfig::new(1.0, 1.0, 1);
        let z = agd(|z| Ok(z.clone()), &cfg, &z0).unwrap();
        assert_eq!(z.norm(), 0.0);
        let z = gd(|z| Ok(z.clone()), 1.0, 1, &z0).unwrap();
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn contraction_bound_on_ill_conditioned_quadratic() {
        // kappa = 1e4: ‖z_K − z*‖² ≤ (1 + kappa)(1 − 1/sqrt(kappa))^K ‖z0 − z*‖²,
        // checked against a direct dense solve.
        let q = SpdQuadratic::random(30, 1e4, 3);
        let z_star = q.minimizer();
        let z0 = DVector::zeros(30);
        let d0 = (&z0 - &z_star).norm_squared();
        for k in [50usize, 200, 800, 2000] {
            let cfg = AgdConfig::new(q.l, q.mu, k);
            let z = agd(|z| Ok(q.grad(z)), &cfg, &z0).unwrap();
            let err = (&z - &z_star).norm_squared();
            let bound = cfg.contraction() * d0;
            assert!(
                err <= bound.max(1e-28),
                "K={k}: error {err:.3e} exceeds bound {bound:.3e}"
            );
        }
    }

    #[test]
    fn divergence_with_wrong_constants_is_detected() {
        // Step 1/L with L far too small diverges on a stiff quadratic.
        let q = SpdQuadratic::random(10, 10.0, 5);
        let z0 = DVector::from_element(10, 1.0);
        let cfg = AgdConfig::new(1e-3, 1e-4, 10_000);
        let r = agd(|z| Ok(q.grad(z)), &cfg, &z0);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn k_for_contraction_is_sufficient_and_tight() {
        for kappa in [10.0, 100.0, 1e4] {
            for gamma in [1e-2, 1e-8] {
                let k = k_for_contraction(kappa, gamma);
                let cfg = AgdConfig::new(1.0, 1.0 / kappa, k);
                assert!(cfg.contraction() <= gamma);
                let slack = AgdConfig::new(1.0, 1.0 / kappa, k.saturating_sub(2));
                assert!(slack.contraction() > gamma * 0.9);
            }
        }
    }
}
