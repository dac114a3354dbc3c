//! Stochastic first-order oracles.
//!
//! An SFO returns unbiased noisy gradients with per-call variance at most
//! `sigma^2` for each objective. Responses are a deterministic function of
//! `(seed, call index, query)`: noise is generated from a counter-based
//! keyed stream (key = seed, counter = call index), so replays reproduce
//! bit-identically and parallel schedules cannot perturb the noise of a
//! given logical call.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::gaussian_vector;
use crate::oracle::{to_sparse, FoResponse, OracleKind, OracleTally, QueryTrace, TraceRecord};
use crate::problem::BilevelProblem;

/// Deterministic per-call RNG: key = seed, counter = call index.
pub fn rng_for_call(seed: u64, call: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(call);
    rng
}

/// Distribution of the gradient noise `(ĝf − ∇f, ĝg − ∇g)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum NoiseModel {
    /// No noise: responses equal the exact first-order oracle.
    Zero,
    /// Isotropic Gaussian noise with total variance `sigma^2` per objective:
    /// `E‖ĝ − ∇‖² = sigma²` over the stacked `(x, y)` gradient.
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match self {
            NoiseModel::Zero => 0.0,
            NoiseModel::Gaussian { sigma } => *sigma,
        }
    }
}

/// Stochastic oracle over a deterministic problem. See [`make_sfo`].
pub struct SfoOracle<'a, P: BilevelProblem + ?Sized> {
    problem: &'a P,
    noise: NoiseModel,
    seed: u64,
    tally: OracleTally,
    trace: QueryTrace,
    tracing: bool,
    next_call: u64,
}

impl<'a, P: BilevelProblem + ?Sized> SfoOracle<'a, P> {
    pub fn tally(&self) -> OracleTally {
        self.tally
    }

    pub fn trace(&self) -> &QueryTrace {
        &self.trace
    }

    pub fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    /// Noisy first-order response at `(x, y)`; one SFO call.
    pub fn sample(&mut self, x: &DVector<f64>, y: &DVector<f64>) -> Result<FoResponse> {
        let call = self.next_call;
        self.next_call += 1;
        let mut resp = FoResponse {
            gx_f: self.problem.grad_f_x(x, y),
            gy_f: self.problem.grad_f_y(x, y),
            gx_g: self.problem.grad_g_x(x, y),
            gy_g: self.problem.grad_g_y(x, y),
        };
        if let NoiseModel::Gaussian { sigma } = self.noise {
            if sigma > 0.0 {
                let d = self.problem.dim_x() + self.problem.dim_y();
                let scale = sigma / (d as f64).sqrt();
                let mut rng = rng_for_call(self.seed, call);
                let nf = gaussian_vector(d, &mut rng) * scale;
                let ng = gaussian_vector(d, &mut rng) * scale;
                let dx = self.problem.dim_x();
                for i in 0..dx {
                    resp.gx_f[i] += nf[i];
                    resp.gx_g[i] += ng[i];
                }
                for i in 0..self.problem.dim_y() {
                    resp.gy_f[i] += nf[dx + i];
                    resp.gy_g[i] += ng[dx + i];
                }
            }
        }
        self.tally.sfo_count += 1;
        if self.tracing {
            let rec = TraceRecord {
                index: call,
                kind: OracleKind::Sfo,
                x: to_sparse(x),
                y: to_sparse(y),
                v: None,
                responses: vec![
                    to_sparse(&resp.gx_f),
                    to_sparse(&resp.gy_f),
                    to_sparse(&resp.gx_g),
                    to_sparse(&resp.gy_g),
                ],
            };
            self.trace.push(rec);
        }
        Ok(resp)
    }
}

/// Builds a stochastic first-order oracle over a deterministic problem.
pub fn make_sfo<P: BilevelProblem + ?Sized>(
    problem: &P,
    noise: NoiseModel,
    seed: u64,
) -> SfoOracle<'_, P> {
    SfoOracle {
        problem,
        noise,
        seed,
        tally: OracleTally::default(),
        trace: QueryTrace::default(),
        tracing: false,
        next_call: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::random_quadratic_bilevel;

    #[test]
    fn zero_noise_equals_exact() {
        let p = random_quadratic_bilevel(3, 4, 10.0, 5);
        let mut sfo = make_sfo(&p, NoiseModel::Zero, 0);
        let x = DVector::from_vec(vec![0.3, -0.2, 1.0]);
        let y = DVector::from_vec(vec![0.1, 0.0, -0.5, 2.0]);
        let r = sfo.sample(&x, &y).unwrap();
        assert_eq!(r.gx_f, p.grad_f_x(&x, &y));
        assert_eq!(r.gy_g, p.grad_g_y(&x, &y));
        assert_eq!(sfo.tally().sfo_count, 1);
    }

    #[test]
    fn same_seed_same_stream() {
        let p = random_quadratic_bilevel(3, 4, 10.0, 5);
        let x = DVector::from_vec(vec![0.3, -0.2, 1.0]);
        let y = DVector::from_vec(vec![0.1, 0.0, -0.5, 2.0]);
        let run = |seed: u64| {
            let mut sfo = make_sfo(&p, NoiseModel::Gaussian { sigma: 0.7 }, seed);
            (0..5).map(|_| sfo.sample(&x, &y).unwrap().gx_f).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn monte_carlo_mean_within_clt_band() {
        let p = random_quadratic_bilevel(2, 2, 4.0, 7);
        let sigma = 0.5;
        let mut sfo = make_sfo(&p, NoiseModel::Gaussian { sigma }, 123);
        let x = DVector::from_vec(vec![0.4, -1.0]);
        let y = DVector::from_vec(vec![0.2, 0.9]);
        let n = 100_000usize;
        let mut mean_f = DVector::zeros(4);
        for _ in 0..n {
            let r = sfo.sample(&x, &y).unwrap();
            let mut stacked = DVector::zeros(4);
            stacked.rows_mut(0, 2).copy_from(&r.gx_f);
            stacked.rows_mut(2, 2).copy_from(&r.gy_f);
            mean_f += stacked;
        }
        mean_f /= n as f64;
        let mut truth = DVector::zeros(4);
        truth.rows_mut(0, 2).copy_from(&p.grad_f_x(&x, &y));
        truth.rows_mut(2, 2).copy_from(&p.grad_f_y(&x, &y));
        let err = (mean_f - truth).norm();
        let band = 4.0 * sigma / (n as f64).sqrt();
        assert!(err <= band, "bias {err} above CLT band {band}");
    }
}
