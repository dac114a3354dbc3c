//! Momentum outer loop with restarts and ball perturbations, for
//! second-order smooth problems where simple descent can stall at saddles.
//!
//! Each epoch runs extrapolated penalty-hypergradient steps
//! `x̃_t = x_t + (1−θ)(x_t − x_{t−1})`, `x_{t+1} = x̃_t − η ∇̂F_λ(x̃_t)`.
//! When the cumulative movement trips `t · Σ_j ‖x_{j+1} − x_j‖² ≥ B²`, the
//! epoch restarts from the current iterate, adding a uniform ball
//! perturbation of radius `r` when the latest gradient estimate is small
//! (`‖∇̂F_λ‖ ≤ B/(2η)`). A run ends when an epoch completes its full length;
//! the output averages `x̃_0..x̃_{T₀}` where `T₀` minimizes the step norm
//! over the second half of the epoch.

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ball_uniform;
use crate::oracle::Oracle;
use crate::problem::BilevelProblem;
use crate::solvers::f2ba::{penalty_hypergrad, penalty_subproblem_curvature, OuterState};
use crate::solvers::{agd, AgdConfig, SolverReport, TerminationReason};

/// Inner iteration schedule `K_t` over the within-epoch step index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum KSchedule {
    Constant(usize),
    /// Indexed by within-epoch `t`, clamped to the last entry.
    PerStep(Vec<usize>),
}

impl KSchedule {
    fn at(&self, t: usize) -> usize {
        match self {
            KSchedule::Constant(k) => *k,
            KSchedule::PerStep(v) => *v.get(t).or(v.last()).expect("non-empty schedule"),
        }
    }

    fn max(&self) -> usize {
        match self {
            KSchedule::Constant(k) => *k,
            KSchedule::PerStep(v) => v.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccConfig {
    pub eta_x: f64,
    pub lambda: f64,
    /// Extrapolation parameter in (0, 1).
    pub theta: f64,
    /// Movement budget before a restart.
    pub big_b: f64,
    /// Perturbation radius.
    pub r: f64,
    /// Log factor carried for bookkeeping (enters the derived schedules).
    pub chi: f64,
    /// Epoch length: a run terminates once an epoch completes `t_epoch`
    /// steps without restarting.
    pub t_epoch: usize,
    pub k_schedule: KSchedule,
    pub seed: u64,
    /// Hard cap on total outer updates across restarts.
    pub max_updates: usize,
}

/// Rate-level constants for deriving an [`AccConfig`] from `(ε, L_F, ρ_F)`.
/// Each field multiplies the corresponding schedule; the defaults are 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AccConstants {
    pub c_eta: f64,
    pub c_theta: f64,
    pub c_b: f64,
    pub c_r: f64,
    pub c_t: f64,
}

impl Default for AccConstants {
    fn default() -> Self {
        AccConstants {
            c_eta: 1.0,
            c_theta: 1.0,
            c_b: 1.0,
            c_r: 1.0,
            c_t: 1.0,
        }
    }
}

impl AccConfig {
    /// Derives the schedule from target accuracy and curvature constants:
    /// `η ≍ 1/L_F`, `θ ≍ √η (ρ_F ε)^{1/4}`, `B ≍ √(ε/ρ_F)/χ²`, `r ≍ ε`,
    /// `T ≍ χ/θ`, with `χ = log(d_x/(δ ε))`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_rates(
        eps: f64,
        l_f: f64,
        rho_f: f64,
        lambda: f64,
        dim_x: usize,
        fail_prob: f64,
        seed: u64,
        c: AccConstants,
    ) -> Self {
        let eta_x = c.c_eta / l_f;
        let chi = (dim_x as f64 / (fail_prob * eps)).ln().max(1.0);
        let theta = (c.c_theta * eta_x.sqrt() * (rho_f * eps).powf(0.25)).min(0.99);
        let big_b = c.c_b * (eps / rho_f).sqrt() / (chi * chi);
        let r = c.c_r * eps;
        let t_epoch = ((c.c_t * chi / theta).ceil() as usize).max(4);
        AccConfig {
            eta_x,
            lambda,
            theta,
            big_b,
            r,
            chi,
            t_epoch,
            k_schedule: KSchedule::Constant(0),
            seed,
            max_updates: 50 * t_epoch,
        }
    }
}

pub fn acc_f2ba<P: BilevelProblem + ?Sized>(
    oracle: &mut Oracle<'_, P>,
    cfg: &AccConfig,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    z0: &DVector<f64>,
) -> Result<SolverReport> {
    let start = Instant::now();
    let problem = oracle.problem();
    let l1 = problem.profile().l1();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut x_prev = x0.clone();
    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut z = z0.clone();
    let mut state = OuterState::new(&x);

    let mut t = 0usize;
    let mut sum_sq = 0.0f64;
    let mut epoch_tilde: Vec<DVector<f64>> = Vec::new();
    let mut epoch_steps: Vec<f64> = Vec::new();
    let mut last_est_norm = f64::INFINITY;
    let mut total_updates = 0usize;
    let mut termination = TerminationReason::BudgetExhausted;

    while total_updates < cfg.max_updates {
        if t >= cfg.t_epoch {
            termination = TerminationReason::Completed;
            break;
        }
        let x_tilde = &x + (1.0 - cfg.theta) * (&x - &x_prev);
        let k_t = cfg.k_schedule.at(t);

        let inner = inner_solves(oracle, &x_tilde, &mut y, &mut z, l1, cfg.lambda, k_t);
        if let Err(e) = inner {
            match e {
                Error::Divergence { .. } | Error::NonFinite(_) => {
                    termination = TerminationReason::Diverged;
                    break;
                }
                other => return Err(other),
            }
        }
        let est = penalty_hypergrad(oracle, &x_tilde, &y, &z, cfg.lambda)?;
        last_est_norm = est.norm();
        let objective = oracle.problem().f(&x_tilde, &y);
        state.record(oracle, total_updates, &x_tilde, last_est_norm, Some(objective));

        let x_next = &x_tilde - cfg.eta_x * &est;
        if !x_next.iter().all(|v| v.is_finite()) {
            termination = TerminationReason::Diverged;
            break;
        }
        let step_norm = (&x_next - &x).norm();
        epoch_tilde.push(x_tilde);
        epoch_steps.push(step_norm);
        sum_sq += step_norm * step_norm;
        x_prev = x;
        x = x_next;
        t += 1;
        total_updates += 1;

        if (t as f64) * sum_sq >= cfg.big_b * cfg.big_b {
            // Restart: reset the counter and momentum; perturb only when the
            // gradient estimate is small.
            let mut x_new = x.clone();
            if last_est_norm <= cfg.big_b / (2.0 * cfg.eta_x) {
                x_new += ball_uniform(x.len(), cfg.r, &mut rng);
            }
            x_prev = x_new.clone();
            x = x_new;
            t = 0;
            sum_sq = 0.0;
            epoch_tilde.clear();
            epoch_steps.clear();
        }
    }

    // Output selection over the final (possibly partial) epoch.
    let x_out = if epoch_tilde.is_empty() {
        x0.clone()
    } else {
        let n = epoch_tilde.len();
        let lo = n / 2;
        let t0 = (lo..n)
            .min_by(|a, b| epoch_steps[*a].total_cmp(&epoch_steps[*b]))
            .unwrap_or(n - 1);
        let mut acc = DVector::zeros(x.len());
        for xt in &epoch_tilde[..=t0] {
            acc += xt;
        }
        acc / (t0 + 1) as f64
    };

    Ok(SolverReport {
        x_out,
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
        outer_iterations: total_updates,
    })
}

fn inner_solves<P: BilevelProblem + ?Sized>(
    oracle: &mut Oracle<'_, P>,
    x_tilde: &DVector<f64>,
    y: &mut DVector<f64>,
    z: &mut DVector<f64>,
    l1: f64,
    lambda: f64,
    k: usize,
) -> Result<()> {
    let (l_g, mu_g) = oracle.problem().lower_curvature(x_tilde);
    let inner = AgdConfig::new(l_g, mu_g, k);
    *z = agd(|v| oracle.fo(x_tilde, v).map(|r| r.gy_g), &inner, z)?;
    let (l_pen, mu_pen) = penalty_subproblem_curvature(l1, l_g, mu_g, lambda);
    let pen = AgdConfig::new(l_pen, mu_pen, k);
    *y = agd(
        |v| {
            let r = oracle.fo(x_tilde, v)?;
            Ok(r.gy_f + lambda * r.gy_g)
        },
        &pen,
        y,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{decoupled_toy, SaddleToy};

    fn base_cfg(seed: u64) -> AccConfig {
        AccConfig {
            eta_x: 0.5,
            lambda: 4.0,
            theta: 0.3,
            big_b: 1e12,
            r: 1e-3,
            chi: 10.0,
            t_epoch: 200,
            k_schedule: KSchedule::Constant(25),
            seed,
            max_updates: 2000,
        }
    }

    #[test]
    fn no_restart_on_benign_quadratic() {
        // Quadratic F with no negative curvature and a huge movement budget:
        // the heavy-ball-like loop reaches small gradient in one epoch.
        let p = decoupled_toy(5);
        let mut oracle = Oracle::without_trace(&p);
        let x0 = DVector::from_element(5, 2.0);
        let y0 = DVector::zeros(5);
        let report = acc_f2ba(&mut oracle, &base_cfg(1), &x0, &y0, &y0).unwrap();
        assert_eq!(report.termination, TerminationReason::Completed);
        assert_eq!(report.outer_iterations, 200, "no restart should fire");
        assert!(report.best_ref_grad_norm.unwrap() <= 1e-6);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = SaddleToy::new(0.1, 1e-4);
        let run = |seed: u64| {
            let mut oracle = Oracle::without_trace(&p);
            let mut cfg = base_cfg(seed);
            cfg.big_b = 1e-2;
            cfg.t_epoch = 120;
            let x0 = DVector::zeros(4);
            let y0 = DVector::zeros(2);
            acc_f2ba(&mut oracle, &cfg, &x0, &y0, &y0)
                .unwrap()
                .estimator_norms
        };
        assert_eq!(run(7), run(7));
    }
}
