use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothness and curvature constants attached to a bilevel problem.
///
/// `l[q]` is the Lipschitz constant of the `q`th-order derivative of both
/// objectives, for `q = 0..=p+1`. Entries may be `f64::INFINITY` when a
/// constant is unbounded (e.g. `L_0` for quadratic upper levels); infinite
/// entries are skipped when forming the global condition number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothnessProfile {
    /// Smoothness order `p`.
    pub order: usize,
    /// Constants `L_0 ..= L_{p+1}`.
    pub l: Vec<f64>,
    /// Strong-convexity modulus of the lower level in `y`.
    pub mu_y: f64,
    /// Strong-convexity modulus of the hyper-objective (0 when none).
    pub mu_x: f64,
    /// Initial hyper-objective suboptimality `F(0) - inf F`.
    pub delta: f64,
}

impl SmoothnessProfile {
    /// First-order profile with constants `(L_0, L_1, L_2)`.
    pub fn first_order(l0: f64, l1: f64, l2: f64, mu_y: f64, delta: f64) -> Self {
        SmoothnessProfile {
            order: 1,
            l: vec![l0, l1, l2],
            mu_y,
            mu_x: 0.0,
            delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l.len() != self.order + 2 {
            return Err(Error::regime(format!(
                "profile needs L_0..L_{{p+1}} = {} constants, got {}",
                self.order + 2,
                self.l.len()
            )));
        }
        if !(self.mu_y > 0.0) {
            return Err(Error::regime("mu_y must be positive"));
        }
        if self.l1() < self.mu_y {
            return Err(Error::regime(format!(
                "need mu_y <= L_1, got mu_y = {} > L_1 = {}",
                self.mu_y,
                self.l1()
            )));
        }
        if self.l.iter().any(|v| *v < 0.0 || v.is_nan()) {
            return Err(Error::regime("smoothness constants must be nonnegative"));
        }
        Ok(())
    }

    pub fn l1(&self) -> f64 {
        self.l[1]
    }

    /// Lower-level condition number `kappa_y = L_1 / mu_y`.
    pub fn kappa_y(&self) -> f64 {
        self.l1() / self.mu_y
    }

    /// Global condition number `max_q L_q / mu_y` over the finite constants.
    pub fn kappa_bar(&self) -> f64 {
        let l_bar = self
            .l
            .iter()
            .cloned()
            .filter(|v| v.is_finite())
            .fold(0.0_f64, f64::max);
        l_bar / self.mu_y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappas() {
        let p = SmoothnessProfile::first_order(f64::INFINITY, 4.0, 8.0, 0.5, 1.0);
        p.validate().unwrap();
        assert_eq!(p.kappa_y(), 8.0);
        assert_eq!(p.kappa_bar(), 16.0);
        assert!(p.kappa_bar() >= p.kappa_y());
    }

    #[test]
    fn rejects_bad_mu() {
        let p = SmoothnessProfile::first_order(1.0, 1.0, 1.0, 2.0, 1.0);
        assert!(p.validate().is_err());
    }
}
