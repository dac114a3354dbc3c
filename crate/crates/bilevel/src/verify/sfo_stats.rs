//! Empirical bias/variance certificates for stochastic oracles.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::oracle::FoResponse;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SfoStats {
    pub n_samples: usize,
    /// `‖mean(ĝf) − ∇f‖` over the stacked `(x, y)` gradient.
    pub bias_f: f64,
    /// `‖mean(ĝg) − ∇g‖`.
    pub bias_g: f64,
    /// Unbiased estimate of `E‖ĝf − ∇f‖²`.
    pub var_f: f64,
    pub var_g: f64,
    /// Standard error of the mean-gradient estimate: `√(v̂_f / n)`.
    pub se_f: f64,
    pub se_g: f64,
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Draws `n_samples` responses from `sample` and compares against the exact
/// response. Variances are measured around the exact gradient (matching the
/// oracle contract `E‖ĝ − ∇‖² ≤ σ²`).
pub fn sfo_stats(
    mut sample: impl FnMut(usize) -> FoResponse,
    exact: &FoResponse,
    n_samples: usize,
) -> SfoStats {
    assert!(n_samples >= 2);
    let truth_f = stack(&exact.gx_f, &exact.gy_f);
    let truth_g = stack(&exact.gx_g, &exact.gy_g);
    let mut sum_f = DVector::zeros(truth_f.len());
    let mut sum_g = DVector::zeros(truth_g.len());
    let mut sq_f = 0.0;
    let mut sq_g = 0.0;
    for i in 0..n_samples {
        let r = sample(i);
        let gf = stack(&r.gx_f, &r.gy_f);
        let gg = stack(&r.gx_g, &r.gy_g);
        sq_f += (&gf - &truth_f).norm_squared();
        sq_g += (&gg - &truth_g).norm_squared();
        sum_f += gf;
        sum_g += gg;
    }
    let n = n_samples as f64;
    let var_f = sq_f / n;
    let var_g = sq_g / n;
    SfoStats {
        n_samples,
        bias_f: (sum_f / n - truth_f).norm(),
        bias_g: (sum_g / n - truth_g).norm(),
        var_f,
        var_g,
        se_f: (var_f / n).sqrt(),
        se_g: (var_g / n).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_oracle_has_zero_bias_and_variance() {
        let exact = FoResponse {
            gx_f: DVector::from_vec(vec![1.0, 2.0]),
            gy_f: DVector::from_vec(vec![-1.0]),
            gx_g: DVector::zeros(2),
            gy_g: DVector::from_vec(vec![0.5]),
        };
        let stats = sfo_stats(|_| exact.clone(), &exact, 1000);
        assert_eq!(stats.bias_f, 0.0);
        assert_eq!(stats.bias_g, 0.0);
        assert_eq!(stats.var_f, 0.0);
        assert_eq!(stats.var_g, 0.0);
    }
}
