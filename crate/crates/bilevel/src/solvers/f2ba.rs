//! Penalty-based fully first-order bilevel solver.
//!
//! The outer loop descends on the penalty hypergradient estimator
//!
//! `∇̂F_λ(x) = ∇ₓf(x, ŷ) + λ(∇ₓg(x, ŷ) − ∇ₓg(x, ẑ))`
//!
//! where `ŷ` approximates `argmin_y f(x,y) + λ g(x,y)` and `ẑ` approximates
//! `argmin_y g(x,y)`; both inner problems are solved by warm-started AGD (or
//! plain GD for the baseline variant).

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::problem::{reference_hypergradient, BilevelProblem};
use crate::solvers::{agd, gd, AgdConfig, HistoryRow, SolverReport, TerminationReason, Thinner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerSolver {
    Agd,
    Gd,
}

/// Outer-loop configuration. `lambda` must satisfy `lambda >= 2 L_1 / mu_y`
/// for the penalty estimator to be well-defined.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct F2baConfig {
    pub eta_x: f64,
    pub lambda: f64,
    /// Outer iterations.
    pub t_outer: usize,
    /// Inner gradient steps per sub-problem per outer iteration.
    pub k_inner: usize,
    pub inner: InnerSolver,
    /// Optional cap on total first-order calls; the run stops early and
    /// reports `BudgetExhausted` when it would be exceeded.
    #[serde(default)]
    pub max_oracle_calls: Option<u64>,
}

/// Default inner contraction target from the outer accuracy `eps`:
/// `gamma = min(1/2, eps²/(kappa_bar³ L₁³)) / (100 λ²)`. The constant 100 is
/// a conservative stand-in for the hidden factor in the inner-accuracy
/// condition of the outer-loop analysis.
pub fn inner_gamma_default(eps: f64, kappa_bar: f64, l1: f64, lambda: f64) -> f64 {
    let cap = (eps * eps / (kappa_bar.powi(3) * l1.powi(3))).min(0.5);
    cap / (100.0 * lambda * lambda)
}

/// Smoothness and strong convexity of the penalty sub-problem
/// `y ↦ f(x,y) + λ g(x,y)` given `g`'s curvature `(l_g, mu_g)` at `x` and the
/// profile bound `l1` on `f`'s gradient Lipschitz constant.
pub fn penalty_subproblem_curvature(l1: f64, l_g: f64, mu_g: f64, lambda: f64) -> (f64, f64) {
    let l = l1 + lambda * l_g;
    let mu_exact = lambda * mu_g - l1;
    let mu = mu_exact.max(0.5 * lambda * mu_g);
    (l, mu)
}

/// Penalty hypergradient estimator at `x` from inner solutions `y_hat`
/// (penalty sub-problem) and `z_hat` (lower level). Consumes exactly one
/// first-order call at each of `(x, y_hat)` and `(x, z_hat)`.
pub fn penalty_hypergrad<P: BilevelProblem + ?Sized>(
    oracle: &mut Oracle<'_, P>,
    x: &DVector<f64>,
    y_hat: &DVector<f64>,
    z_hat: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let at_y = oracle.fo(x, y_hat)?;
    let at_z = oracle.fo(x, z_hat)?;
    Ok(at_y.gx_f + lambda * (at_y.gx_g - at_z.gx_g))
}

pub(crate) struct OuterState {
    pub history: Vec<HistoryRow>,
    pub estimator_norms: Vec<f64>,
    pub ref_norms: Vec<f64>,
    pub oracle_totals: Vec<u64>,
    pub iterates: Vec<(usize, DVector<f64>)>,
    thinner: Thinner,
    pub best_ref: Option<f64>,
    pub x_best: DVector<f64>,
    best_est: f64,
    has_reference: bool,
}

impl OuterState {
    pub fn new(x0: &DVector<f64>) -> Self {
        OuterState {
            history: Vec::new(),
            estimator_norms: Vec::new(),
            ref_norms: Vec::new(),
            oracle_totals: Vec::new(),
            iterates: Vec::new(),
            thinner: Thinner::new(),
            best_ref: None,
            x_best: x0.clone(),
            best_est: f64::INFINITY,
            has_reference: false,
        }
    }

    pub fn record<P: BilevelProblem + ?Sized>(
        &mut self,
        oracle: &Oracle<'_, P>,
        t: usize,
        x: &DVector<f64>,
        est_norm: f64,
        objective: Option<f64>,
    ) {
        let ref_norm = reference_hypergradient(oracle.problem(), x).map(|g| g.norm());
        match ref_norm {
            Some(r) => {
                self.has_reference = true;
                self.ref_norms.push(r);
                if self.best_ref.map(|b| r < b).unwrap_or(true) {
                    self.best_ref = Some(r);
                    self.x_best = x.clone();
                }
            }
            None => {
                if est_norm < self.best_est {
                    self.best_est = est_norm;
                    self.x_best = x.clone();
                }
            }
        }
        self.estimator_norms.push(est_norm);
        self.oracle_totals.push(oracle.tally().total());
        if self.thinner.keep(t) {
            let tally = oracle.tally();
            self.history.push(HistoryRow {
                iteration: t,
                fo_count: tally.fo_count,
                hvp_count: tally.hvp_count,
                estimator_norm: est_norm,
                ref_grad_norm: ref_norm,
                objective,
            });
            self.iterates.push((t, x.clone()));
        }
    }

    pub fn ref_grad_norms(&self) -> Option<Vec<f64>> {
        if self.has_reference {
            Some(self.ref_norms.clone())
        } else {
            None
        }
    }
}

pub fn f2ba<P: BilevelProblem + ?Sized>(
    oracle: &mut Oracle<'_, P>,
    cfg: &F2baConfig,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    z0: &DVector<f64>,
) -> Result<SolverReport> {
    let start = Instant::now();
    let problem = oracle.problem();
    let l1 = problem.profile().l1();
    let lambda = cfg.lambda;

    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut z = z0.clone();
    let mut state = OuterState::new(&x);
    let mut x_sum = DVector::zeros(x.len());
    let mut termination = TerminationReason::Completed;
    let mut completed = 0usize;

    // One extra estimator evaluation at x_T closes the history, so a clean
    // run records outer_iterations + 1 gradient norms.
    for t in 0..=cfg.t_outer {
        if let Some(cap) = cfg.max_oracle_calls {
            if oracle.tally().total() + 2 * (cfg.k_inner as u64 + 1) > cap {
                termination = TerminationReason::BudgetExhausted;
                break;
            }
        }
        let step = inner_and_estimator(oracle, cfg, &x, &mut y, &mut z, l1, lambda);
        let (est, objective) = match step {
            Ok(v) => v,
            Err(Error::Divergence { .. }) | Err(Error::NonFinite(_)) => {
                termination = TerminationReason::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        state.record(oracle, t, &x, est.norm(), Some(objective));
        if t == cfg.t_outer {
            break;
        }
        x_sum += &x;
        x -= cfg.eta_x * est;
        completed = t + 1;
        if !x.iter().all(|v| v.is_finite()) {
            termination = TerminationReason::Diverged;
            break;
        }
    }

    let x_out = if completed > 0 {
        &x_sum / completed as f64
    } else {
        x0.clone()
    };
    Ok(SolverReport {
        x_out,
        x_best: state.x_best,
        best_ref_grad_norm: state.best_ref,
        ref_grad_norms: state.ref_grad_norms(),
        oracle_totals: state.oracle_totals.clone(),
        estimator_norms: state.estimator_norms,
        history: state.history,
        iterates: state.iterates,
        tally: oracle.tally(),
        wall_clock: start.elapsed(),
        termination,
        outer_iterations: completed,
    })
}

fn inner_and_estimator<P: BilevelProblem + ?Sized>(
    oracle: &mut Oracle<'_, P>,
    cfg: &F2baConfig,
    x: &DVector<f64>,
    y: &mut DVector<f64>,
    z: &mut DVector<f64>,
    l1: f64,
    lambda: f64,
) -> Result<(DVector<f64>, f64)> {
    let (l_g, mu_g) = oracle.problem().lower_curvature(x);

    // Lower-level solve: z ≈ argmin_y g(x, y), warm-started.
    *z = match cfg.inner {
        InnerSolver::Agd => {
            let inner = AgdConfig::new(l_g, mu_g, cfg.k_inner);
            agd(|v| oracle.fo(x, v).map(|r| r.gy_g), &inner, z)?
        }
        InnerSolver::Gd => gd(|v| oracle.fo(x, v).map(|r| r.gy_g), l_g, cfg.k_inner, z)?,
    };

    // Penalty solve: y ≈ argmin_y f(x,y) + λ g(x,y), warm-started.
    let (l_pen, mu_pen) = penalty_subproblem_curvature(l1, l_g, mu_g, lambda);
    let pen_grad = |oracle: &mut Oracle<'_, P>, v: &DVector<f64>| -> Result<DVector<f64>> {
        let r = oracle.fo(x, v)?;
        Ok(r.gy_f + lambda * r.gy_g)
    };
    *y = match cfg.inner {
        InnerSolver::Agd => {
            let inner = AgdConfig::new(l_pen, mu_pen, cfg.k_inner);
            agd(|v| pen_grad(oracle, v), &inner, y)?
        }
        InnerSolver::Gd => gd(|v| pen_grad(oracle, v), l_pen, cfg.k_inner, y)?,
    };

    let est = penalty_hypergrad(oracle, x, y, z, lambda)?;
    let objective = oracle.problem().f(x, y);
    Ok((est, objective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{decoupled_toy, random_quadratic_bilevel};
    use crate::problem::exact_hypergradient;

    #[test]
    fn penalty_term_cancels_when_inner_points_agree() {
        // y_hat = z_hat and f independent of y: estimator reduces to ∇ₓf.
        let p = decoupled_toy(3);
        let mut oracle = Oracle::new(&p);
        let x = DVector::from_vec(vec![1.0, 2.0, -0.5]);
        let y = DVector::from_vec(vec![0.3, 0.1, 0.0]);
        let est = penalty_hypergrad(&mut oracle, &x, &y, &y, 1e6).unwrap();
        assert!((est - &x).norm() < 1e-12);
        assert_eq!(oracle.tally().fo_count, 2);
    }

    #[test]
    fn decoupled_problem_converges_with_exact_agreement() {
        // f = ½‖x‖² + ½‖y‖², g = ½‖y‖²: F(x) = ½‖x‖², estimator is exact
        // once the inner solves land on y*_λ and y*.
        let p = decoupled_toy(4);
        let mut oracle = Oracle::without_trace(&p);
        let cfg = F2baConfig {
            eta_x: 0.5,
            lambda: 2.0,
            t_outer: 60,
            k_inner: 30,
            inner: InnerSolver::Agd,
            max_oracle_calls: None,
        };
        let x0 = DVector::from_element(4, 1.0);
        let y0 = DVector::zeros(4);
        let report = f2ba(&mut oracle, &cfg, &x0, &y0, &y0).unwrap();
        assert_eq!(report.termination, TerminationReason::Completed);
        let final_norm = *report.estimator_norms.last().unwrap();
        assert!(final_norm <= 1e-6, "final estimator norm {final_norm}");
        // estimator equals the exact hypergradient on the decoupled problem
        let t = report.outer_iterations;
        assert_eq!(report.estimator_norms.len(), t + 1);
    }

    #[test]
    fn oracle_count_per_outer_iteration_is_exact() {
        let p = random_quadratic_bilevel(4, 5, 20.0, 2);
        let mut oracle = Oracle::without_trace(&p);
        let cfg = F2baConfig {
            eta_x: 0.05,
            lambda: 100.0,
            t_outer: 7,
            k_inner: 13,
            inner: InnerSolver::Agd,
            max_oracle_calls: None,
        };
        let x0 = DVector::zeros(4);
        let y0 = DVector::zeros(5);
        let report = f2ba(&mut oracle, &cfg, &x0, &y0, &y0).unwrap();
        // 2K (inner) + 2 (estimator) per outer iteration, including the
        // closing evaluation at x_T.
        let per_iter = 2 * cfg.k_inner as u64 + 2;
        assert_eq!(report.tally.fo_count, (cfg.t_outer as u64 + 1) * per_iter);
    }

    #[test]
    fn reaches_stationarity_on_random_quadratic_instance() {
        let p = random_quadratic_bilevel(10, 10, 100.0, 11);
        let mut oracle = Oracle::without_trace(&p);
        let lambda = 100.0 * 2.0 * p.profile().kappa_y();
        let cfg = F2baConfig {
            eta_x: 0.02,
            lambda,
            t_outer: 400,
            k_inner: 120,
            inner: InnerSolver::Agd,
            max_oracle_calls: None,
        };
        let x0 = DVector::zeros(10);
        let y0 = DVector::zeros(10);
        let report = f2ba(&mut oracle, &cfg, &x0, &y0, &y0).unwrap();
        let best = report.best_ref_grad_norm.unwrap();
        assert!(best <= 1e-3, "min_t ‖∇F(x_t)‖ = {best}");
        // the averaged output is also a reasonable point
        let g_out = exact_hypergradient(&p, &report.x_out).unwrap().norm();
        assert!(g_out.is_finite());
    }

    #[test]
    fn divergence_is_reported_not_panicked() {
        let p = random_quadratic_bilevel(4, 4, 10.0, 3);
        let mut oracle = Oracle::without_trace(&p);
        let cfg = F2baConfig {
            eta_x: 1e9,
            lambda: 40.0,
            t_outer: 50,
            k_inner: 5,
            inner: InnerSolver::Gd,
            max_oracle_calls: None,
        };
        let x0 = DVector::from_element(4, 1.0);
        let y0 = DVector::zeros(4);
        let report = f2ba(&mut oracle, &cfg, &x0, &y0, &y0).unwrap();
        assert_eq!(report.termination, TerminationReason::Diverged);
    }
}
