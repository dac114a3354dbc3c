use serde::{Deserialize, Serialize};

/// Which hard-instance family a prediction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    NcscP1,
    NcscP2,
    NcscHighOrder,
    Csc,
    Scsc,
    Stochastic,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::NcscP1 => "ncsc-p1",
            Regime::NcscP2 => "ncsc-p2",
            Regime::NcscHighOrder => "ncsc-high-order",
            Regime::Csc => "csc",
            Regime::Scsc => "scsc",
            Regime::Stochastic => "stochastic",
        };
        write!(f, "{s}")
    }
}

/// Value of the oracle-call lower-bound formula at the instance parameters
/// (the leading-order term, constant factors dropped).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LowerBoundPrediction {
    pub regime: Regime,
    pub oracle_calls: f64,
}

impl LowerBoundPrediction {
    /// `κ_y² L₁ Δ ε⁻²` (first-order smooth).
    pub fn ncsc_p1(kappa_y: f64, l1: f64, delta: f64, eps: f64) -> Self {
        LowerBoundPrediction {
            regime: Regime::NcscP1,
            oracle_calls: kappa_y.powi(2) * l1 * delta / (eps * eps),
        }
    }

    /// `κ_y^{25/14} L₁^{3/7} L₂^{2/7} Δ ε^{−12/7}` (second-order smooth).
    pub fn ncsc_p2(kappa_y: f64, l1: f64, l2: f64, delta: f64, eps: f64) -> Self {
        LowerBoundPrediction {
            regime: Regime::NcscP2,
            oracle_calls: kappa_y.powf(25.0 / 14.0)
                * l1.powf(3.0 / 7.0)
                * l2.powf(2.0 / 7.0)
                * delta
                * eps.powf(-12.0 / 7.0),
        }
    }

    /// `κ_y^{17/10} L₁^{3/5} L*^{1/5} Δ ε^{−8/5}` with
    /// `L* = min_q (L_q/L₁)^{2/(q−1)}` (arbitrarily smooth).
    pub fn ncsc_high_order(kappa_y: f64, l: &[f64], delta: f64, eps: f64) -> Self {
        let l1 = l[1];
        let l_star = (2..l.len())
            .filter(|q| l[*q].is_finite() && l[*q] > 0.0)
            .map(|q| (l[q] / l1).powf(2.0 / (q as f64 - 1.0)))
            .fold(f64::INFINITY, f64::min);
        LowerBoundPrediction {
            regime: Regime::NcscHighOrder,
            oracle_calls: kappa_y.powf(1.7) * l1.powf(0.6) * l_star.powf(0.2) * delta
                * eps.powf(-1.6),
        }
    }

    /// `κ_y^{5/4} √(L₁ D/ε)` (convex hyper-objective).
    pub fn csc(kappa_y: f64, l1: f64, d: f64, eps: f64) -> Self {
        LowerBoundPrediction {
            regime: Regime::Csc,
            oracle_calls: kappa_y.powf(1.25) * (l1 * d / eps).sqrt(),
        }
    }

    /// `κ_y^{5/4} √κₓ ln(μₓD²/ε)` (strongly convex hyper-objective).
    pub fn scsc(kappa_y: f64, kappa_x: f64, mu_x: f64, d: f64, eps: f64) -> Self {
        LowerBoundPrediction {
            regime: Regime::Scsc,
            oracle_calls: kappa_y.powf(1.25) * kappa_x.sqrt() * (mu_x * d * d / eps).ln().max(1.0),
        }
    }

    /// `κ_y² L₁ Δ ε⁻² (1 + σ² κ_y²/ε²)` (stochastic first-order oracle).
    pub fn stochastic(kappa_y: f64, l1: f64, sigma: f64, delta: f64, eps: f64) -> Self {
        let base = kappa_y.powi(2) * l1 * delta / (eps * eps);
        LowerBoundPrediction {
            regime: Regime::Stochastic,
            oracle_calls: base * (1.0 + sigma * sigma * kappa_y * kappa_y / (eps * eps)),
        }
    }
}
