//! Instrumented solvers: accelerated/plain gradient descent for inner
//! problems, penalty-based fully first-order outer loops, and an HVP-based
//! implicit-differentiation baseline.

mod agd;
mod aid;
mod f2ba;
mod momentum;

pub use agd::{agd, gd, k_for_contraction, AgdConfig};
pub use aid::{aid, AidConfig};
pub use f2ba::{f2ba, inner_gamma_default, penalty_hypergrad, penalty_subproblem_curvature, F2baConfig, InnerSolver};
pub use momentum::{acc_f2ba, AccConfig, KSchedule};

use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::oracle::OracleTally;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    Completed,
    /// A non-finite iterate appeared; the run stops and reports instead of
    /// panicking.
    Diverged,
    BudgetExhausted,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TerminationReason::Completed => write!(f, "completed"),
            TerminationReason::Diverged => write!(f, "diverged"),
            TerminationReason::BudgetExhausted => write!(f, "budget-exhausted"),
        }
    }
}

/// One sampled point of a run history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub fo_count: u64,
    pub hvp_count: u64,
    /// Norm of the solver's own gradient estimator at this iterate.
    pub estimator_norm: f64,
    /// Reference `‖∇F‖`, present only when the problem exposes a closed form
    /// or quadratic lower level — never approximated silently.
    pub ref_grad_norm: Option<f64>,
    /// Upper-level value at the current inner solution.
    pub objective: Option<f64>,
}

/// Outcome of a solver run: trajectory summaries, oracle tallies, and the
/// gradient-norm history of the estimator.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub x_out: DVector<f64>,
    /// Iterate with the smallest reference gradient norm (estimator norm
    /// when no reference is available).
    pub x_best: DVector<f64>,
    pub best_ref_grad_norm: Option<f64>,
    /// Estimator gradient norms at `x_0 .. x_T` (outer iterations + 1 on a
    /// completed run).
    pub estimator_norms: Vec<f64>,
    /// Reference `‖∇F‖` per outer iterate, aligned with `estimator_norms`;
    /// `None` when the problem exposes no reference route.
    pub ref_grad_norms: Option<Vec<f64>>,
    /// Cumulative oracle calls (all kinds) at each outer iterate, aligned
    /// with `estimator_norms`.
    pub oracle_totals: Vec<u64>,
    pub history: Vec<HistoryRow>,
    /// Thinned iterates `(outer iteration, x)`.
    pub iterates: Vec<(usize, DVector<f64>)>,
    pub tally: OracleTally,
    pub wall_clock: Duration,
    pub termination: TerminationReason,
    pub outer_iterations: usize,
}

impl SolverReport {
    pub fn final_ref_grad_norm(&self) -> Option<f64> {
        self.ref_grad_norms.as_ref().and_then(|v| v.last().copied())
    }

    /// Oracle calls spent when the reference gradient norm first dropped to
    /// `eps`, or `None` if it never did (or no reference exists).
    pub fn calls_to_stationarity(&self, eps: f64) -> Option<u64> {
        let refs = self.ref_grad_norms.as_ref()?;
        refs.iter()
            .position(|r| *r <= eps)
            .map(|i| self.oracle_totals[i])
    }
}

/// Records every iteration up to 1000, then geometrically thinned samples
/// (spacing grows by 1.1x) so long runs produce bounded histories.
pub(crate) struct Thinner {
    next: usize,
}

impl Thinner {
    pub fn new() -> Self {
        Thinner { next: 0 }
    }

    pub fn keep(&mut self, iteration: usize) -> bool {
        if iteration <= 1000 {
            return true;
        }
        if iteration >= self.next {
            self.next = ((iteration as f64) * 1.1).ceil() as usize;
            true
        } else {
            false
        }
    }
}
