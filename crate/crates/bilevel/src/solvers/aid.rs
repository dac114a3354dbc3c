//! HVP-based implicit-differentiation baseline.
//!
//! Per outer step: AGD on `g(x_t, ·)` tracks `y*(x_t)`; a second AGD on the
//! quadratic `v ↦ ½ vᵀ ∇²ᵧᵧg(x,y) v + ∇ᵧf(x,y)ᵀ v` tracks
//! `v* = −[∇²ᵧᵧg]⁻¹ ∇ᵧf`, using one HVP call per step (the response carries
//! both `∇²ᵧᵧg·v` and `∇ᵧf`); the hyper-step then descends along
//! `∇ₓf + ∇²ₓᵧg·v`, which at exact inner solutions equals the exact
//! hypergradient.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::problem::BilevelProblem;
use crate::solvers::f2ba::OuterState;
use crate::solvers::{agd, AgdConfig, SolverReport, TerminationReason};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AidConfig {
    pub eta_x: f64,
    pub t_outer: usize,
    /// AGD steps on `g(x_t, ·)` per outer iteration.
    pub k_y: usize,
    /// AGD steps on the tracking quadratic per outer iteration.
    pub k_v: usize,
    #[serde(default)]
    pub max_oracle_calls: Option<u64>,
}

pub fn aid<P: BilevelProblem + ?Sized>(
    oracle: &mut Oracle<'_, P>,
    cfg: &AidConfig,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
) -> Result<SolverReport> {
    if !oracle.problem().has_second_order() {
        return Err(Error::MissingCapability("second-order products of g"));
    }
    let start = Instant::now();
    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut v = DVector::zeros(oracle.problem().dim_y());
    let mut state = OuterState::new(&x);
    let mut termination = TerminationReason::Completed;
    let mut completed = 0usize;

    for t in 0..=cfg.t_outer {
        if let Some(cap) = cfg.max_oracle_calls {
            if oracle.tally().total() + (cfg.k_y + cfg.k_v + 1) as u64 > cap {
                termination = TerminationReason::BudgetExhausted;
                break;
            }
        }
        let step = hyper_step(oracle, cfg, &x, &mut y, &mut v);
        let hyper = match step {
            Ok(h) => h,
            Err(Error::Divergence { .. }) | Err(Error::NonFinite(_)) => {
                termination = TerminationReason::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let objective = oracle.problem().f(&x, &y);
        state.record(oracle, t, &x, hyper.norm(), Some(objective));
        if t == cfg.t_outer {
            break;
        }
        x -= cfg.eta_x * hyper;
        completed = t + 1;
        if !x.iter().all(|c| c.is_finite()) {
            termination = TerminationReason::Diverged;
            break;
        }
    }

    Ok(SolverReport {
        x_out: x.clone(),
        x_best: state.x_best.clone(),
        best_ref_grad_norm: state.best_ref,
        ref_grad_norms: state.ref_grad_norms(),
        oracle_totals: state.oracle_totals.clone(),
        estimator_norms: state.estimator_norms.clone(),
        history: state.history,
        iterates: state.iterates,
        tally: oracle.tally(),
        wall_clock: start.elapsed(),
        termination,
        outer_iterations: completed,
    })
}

fn hyper_step<P: BilevelProblem + ?Sized>(
    oracle: &mut Oracle<'_, P>,
    cfg: &AidConfig,
    x: &DVector<f64>,
    y: &mut DVector<f64>,
    v: &mut DVector<f64>,
) -> Result<DVector<f64>> {
    let (l_g, mu_g) = oracle.problem().lower_curvature(x);

    let y_cfg = AgdConfig::new(l_g, mu_g, cfg.k_y);
    *y = agd(|w| oracle.fo(x, w).map(|r| r.gy_g), &y_cfg, y)?;

    // The tracking quadratic inherits g's curvature bounds in y.
    let v_cfg = AgdConfig::new(l_g, mu_g, cfg.k_v);
    let y_fixed = y.clone();
    *v = agd(
        |w| {
            let r = oracle.hvp(x, &y_fixed, w)?;
            Ok(r.hyy_v + r.gy_f)
        },
        &v_cfg,
        v,
    )?;

    let r = oracle.hvp(x, &y_fixed, v)?;
    Ok(r.gx_f + r.jxy_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::exact_hypergradient;
    use crate::synthetic::{decoupled_toy, random_quadratic_bilevel};

    #[test]
    fn exact_inner_solves_recover_exact_hypergradient() {
        let p = random_quadratic_bilevel(5, 6, 20.0, 4);
        let mut oracle = Oracle::without_trace(&p);
        let x = DVector::from_vec(vec![0.2, -0.4, 0.9, 0.0, 0.3]);
        let mut y = DVector::zeros(6);
        let mut v = DVector::zeros(6);
        let cfg = AidConfig {
            eta_x: 0.1,
            t_outer: 1,
            k_y: 400,
            k_v: 400,
            max_oracle_calls: None,
        };
        let hyper = hyper_step(&mut oracle, &cfg, &x, &mut y, &mut v).unwrap();
        let exact = exact_hypergradient(&p, &x).unwrap();
        assert!(
            (hyper.clone() - &exact).norm() <= 1e-10 * (1.0 + exact.norm()),
            "gap {}",
            (hyper - exact).norm()
        );
    }

    #[test]
    fn decoupled_reduces_to_descent_on_f() {
        let p = decoupled_toy(3);
        let mut oracle = Oracle::without_trace(&p);
        let x0 = DVector::from_element(3, 1.5);
        let y0 = DVector::zeros(3);
        let cfg = AidConfig {
            eta_x: 0.5,
            t_outer: 40,
            k_y: 10,
            k_v: 10,
            max_oracle_calls: None,
        };
        let report = aid(&mut oracle, &cfg, &x0, &y0).unwrap();
        assert_eq!(report.termination, TerminationReason::Completed);
        assert!(report.best_ref_grad_norm.unwrap() <= 1e-8);
        assert!(report.tally.hvp_count > 0);
    }
}
