//! Stochastic chain instance: a rescaling-only bilevel pair whose upper
//! level is a randomized-rotation nonconvex chain with a progress-spiked
//! Bernoulli stochastic first-order oracle.
//!
//! Chain components:
//! `Ψ(x) = 1_{x>1/2} exp(1 − 1/(2x−1)²)`, `Φ(x) = √e ∫_{−∞}^x e^{−t²/2} dt`,
//!
//! `f̄_s(u) = −Ψ(1)Φ(u₁) + Σ_{i=2}^T [Ψ(−u_{i−1})Φ(−u_i) − Ψ(u_{i−1})Φ(u_i)]`.
//!
//! The SFO multiplies the gradient entry at coordinate `prog(u)+1` by
//! `ξ/p`, `ξ ~ Bernoulli(p)` — unbiased, with variance concentrated on the
//! one coordinate a zero-respecting method needs next. The served instance
//! composes the chain with a soft radial projection `ρ` and a column-
//! orthogonal rotation `U`, adds `‖w‖²/10`, and couples it to a quadratic
//! lower level with `z*(x) = κ_y·x`:
//!
//! `f(x,z) = (L₁β²/155)·f̄_rs(z/β)`, `g(x,z) = μ_y‖z‖²/2 − L₁⟨x,z⟩`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::random_orthogonal;
use crate::lowerbound::chains::prog;
use crate::lowerbound::predict::LowerBoundPrediction;
use crate::oracle::{FoResponse, OracleTally};
use crate::problem::{BilevelProblem, QuadraticLowerLevel};
use crate::profile::SmoothnessProfile;
use crate::sfo::rng_for_call;

pub fn psi(x: f64) -> f64 {
    if x > 0.5 {
        (1.0 - 1.0 / ((2.0 * x - 1.0) * (2.0 * x - 1.0))).exp()
    } else {
        0.0
    }
}

pub fn psi_deriv(x: f64) -> f64 {
    if x > 0.5 {
        let s = 2.0 * x - 1.0;
        psi(x) * 4.0 / (s * s * s)
    } else {
        0.0
    }
}

/// `Φ(x) = √(2πe)·N(x)` with the standard normal CDF `N` evaluated through
/// the complementary error function.
pub fn phi(x: f64) -> f64 {
    let n = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt() * n
}

pub fn phi_deriv(x: f64) -> f64 {
    std::f64::consts::E.sqrt() * (-0.5 * x * x).exp()
}

/// Value and gradient of the unrotated stochastic chain `f̄_s`.
pub fn stochastic_chain(u: &DVector<f64>) -> (f64, DVector<f64>) {
    let t = u.len();
    let mut value = -psi(1.0) * phi(u[0]);
    let mut grad = DVector::zeros(t);
    grad[0] = -psi(1.0) * phi_deriv(u[0]);
    for i in 1..t {
        value += psi(-u[i - 1]) * phi(-u[i]) - psi(u[i - 1]) * phi(u[i]);
        grad[i - 1] += -psi_deriv(-u[i - 1]) * phi(-u[i]) - psi_deriv(u[i - 1]) * phi(u[i]);
        grad[i] += -psi(-u[i - 1]) * phi_deriv(-u[i]) - psi(u[i - 1]) * phi_deriv(u[i]);
    }
    (value, grad)
}

/// The progress-spiked stochastic gradient of `f̄_s`: entry `prog(u)+1` is
/// scaled by `xi/p`.
pub fn stochastic_chain_sfo(u: &DVector<f64>, p: f64, xi: bool, tol: f64) -> DVector<f64> {
    let (_, mut grad) = stochastic_chain(u);
    let j = prog(u, tol); // spike lands on the next coordinate, 0-based j
    if j < u.len() {
        grad[j] *= if xi { 1.0 / p } else { 0.0 };
    }
    grad
}

pub struct StochasticHardInstance {
    /// Chain length.
    pub t: usize,
    /// Ambient dimension `d ≥ T`.
    pub d: usize,
    /// Bernoulli parameter of the oracle spike.
    pub p_bern: f64,
    pub beta: f64,
    pub l1: f64,
    pub mu_y: f64,
    /// Soft-projection radius `R = 230 √T`.
    pub r_cap: f64,
    /// Tolerance used by `prog` inside the oracle (0 for identity rotation,
    /// small positive under rotation to absorb floating-point fill-in).
    pub prog_tol: f64,
    rotation: Option<DMatrix<f64>>,
    quad: QuadraticLowerLevel,
    profile: SmoothnessProfile,
}

impl StochasticHardInstance {
    pub fn new(
        t: usize,
        d: usize,
        p_bern: f64,
        beta: f64,
        l1: f64,
        mu_y: f64,
        rotation_seed: Option<u64>,
    ) -> Result<Self> {
        if t < 2 || d < t {
            return Err(Error::regime(format!("need d >= T >= 2, got T={t}, d={d}")));
        }
        if !(0.0 < p_bern && p_bern <= 1.0) {
            return Err(Error::regime("Bernoulli parameter must lie in (0, 1]"));
        }
        let rotation = match rotation_seed {
            None => None,
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let full = random_orthogonal(d, &mut rng);
                Some(full.columns(0, t).into_owned())
            }
        };
        let quad = QuadraticLowerLevel::new(
            DMatrix::identity(d, d) * mu_y,
            -DMatrix::identity(d, d) * l1,
            DVector::zeros(d),
        )?;
        let profile = SmoothnessProfile {
            order: 1,
            l: vec![f64::INFINITY, l1, f64::INFINITY],
            mu_y,
            mu_x: 0.0,
            delta: l1 * beta * beta / 155.0 * 12.0 * t as f64,
        };
        Ok(StochasticHardInstance {
            t,
            d,
            p_bern,
            beta,
            l1,
            mu_y,
            r_cap: 230.0 * (t as f64).sqrt(),
            prog_tol: if rotation.is_some() { 1e-12 } else { 0.0 },
            rotation,
            quad,
            profile,
        })
    }

    fn rho(&self, w: &DVector<f64>) -> (DVector<f64>, f64) {
        let s = (1.0 + w.norm_squared() / (self.r_cap * self.r_cap)).sqrt();
        (w / s, s)
    }

    /// `J_ρ(w)ᵀ u = u/s − w (wᵀu)/(R² s³)`.
    fn rho_jacobian_t(&self, w: &DVector<f64>, u: &DVector<f64>, s: f64) -> DVector<f64> {
        u / s - w * (w.dot(u) / (self.r_cap * self.r_cap * s * s * s))
    }

    fn to_chain(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.rotation {
            None => v.rows(0, self.t).into_owned(),
            Some(u) => u.transpose() * v,
        }
    }

    fn from_chain(&self, g: &DVector<f64>) -> DVector<f64> {
        match &self.rotation {
            None => {
                let mut out = DVector::zeros(self.d);
                out.rows_mut(0, self.t).copy_from(g);
                out
            }
            Some(u) => u * g,
        }
    }

    /// Exact value and gradient of `f̄_rs(w) = f̄_s(Uᵀρ(w)) + ‖w‖²/10`.
    pub fn rs_value_grad(&self, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let (rho_w, s) = self.rho(w);
        let u = self.to_chain(&rho_w);
        let (val, chain_grad) = stochastic_chain(&u);
        let lifted = self.from_chain(&chain_grad);
        let grad = self.rho_jacobian_t(w, &lifted, s) + w / 5.0;
        (val + w.norm_squared() / 10.0, grad)
    }

    /// Stochastic gradient of `f̄_rs` for a given Bernoulli draw.
    pub fn rs_sfo_grad(&self, w: &DVector<f64>, xi: bool) -> DVector<f64> {
        let (rho_w, s) = self.rho(w);
        let u = self.to_chain(&rho_w);
        let chain_grad = stochastic_chain_sfo(&u, self.p_bern, xi, self.prog_tol);
        let lifted = self.from_chain(&chain_grad);
        self.rho_jacobian_t(w, &lifted, s) + w / 5.0
    }

    /// Scale factor applied to chain gradients inside `∇f`.
    pub fn f_scale(&self) -> f64 {
        self.l1 * self.beta / 155.0
    }

    /// Upper bound on the SFO variance of `∇̂f`: `(23·L₁β/155)²(1−p)/p`.
    pub fn variance_bound(&self) -> f64 {
        let c = 23.0 * self.f_scale();
        c * c * (1.0 - self.p_bern) / self.p_bern
    }

    /// An SFO view over this instance with the given seed.
    pub fn sfo(&self, seed: u64) -> ChainSfo<'_> {
        ChainSfo {
            inst: self,
            seed,
            tally: OracleTally::default(),
            next_call: 0,
        }
    }

    pub fn kappa_y(&self) -> f64 {
        self.l1 / self.mu_y
    }
}

impl BilevelProblem for StochasticHardInstance {
    fn dim_x(&self) -> usize {
        self.d
    }
    fn dim_y(&self) -> usize {
        self.d
    }
    fn profile(&self) -> &SmoothnessProfile {
        &self.profile
    }
    fn f(&self, _x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let (val, _) = self.rs_value_grad(&(z / self.beta));
        self.l1 * self.beta * self.beta / 155.0 * val
    }
    fn g(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        self.quad.value(x, z)
    }
    fn grad_f_x(&self, x: &DVector<f64>, _z: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn grad_f_y(&self, _x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let (_, g) = self.rs_value_grad(&(z / self.beta));
        g * self.f_scale()
    }
    fn grad_g_x(&self, x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        self.quad.grad_x(x, z)
    }
    fn grad_g_y(&self, x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        self.quad.grad_y(x, z)
    }
    fn hess_g_xy_v(
        &self,
        _x: &DVector<f64>,
        _y: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(&self.quad.j * v)
    }
    fn hess_g_yy_v(
        &self,
        _x: &DVector<f64>,
        _y: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(&self.quad.h * v)
    }
    fn has_second_order(&self) -> bool {
        true
    }
    fn quadratic_lower(&self) -> Option<&QuadraticLowerLevel> {
        Some(&self.quad)
    }
    fn reference_hypergradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        // F(x) = (L₁β²/155)·f̄_rs(κ_y·x/β).
        let kappa = self.kappa_y();
        let (_, g) = self.rs_value_grad(&(x * (kappa / self.beta)));
        Some(g * (self.f_scale() * kappa))
    }
}

/// Counting stochastic oracle over a [`StochasticHardInstance`]. The `g`
/// responses are exact (its oracle is deterministic); the `f` responses
/// carry the Bernoulli spike, keyed by `(seed, call index)`.
pub struct ChainSfo<'a> {
    inst: &'a StochasticHardInstance,
    seed: u64,
    tally: OracleTally,
    next_call: u64,
}

impl ChainSfo<'_> {
    pub fn tally(&self) -> OracleTally {
        self.tally
    }

    pub fn sample(&mut self, x: &DVector<f64>, z: &DVector<f64>) -> Result<FoResponse> {
        let call = self.next_call;
        self.next_call += 1;
        self.tally.sfo_count += 1;
        let mut rng = rng_for_call(self.seed, call);
        let xi = rng.gen::<f64>() < self.inst.p_bern;
        let grad_chain = self.inst.rs_sfo_grad(&(z / self.inst.beta), xi);
        Ok(FoResponse {
            gx_f: DVector::zeros(self.inst.d),
            gy_f: grad_chain * self.inst.f_scale(),
            gx_g: self.inst.grad_g_x(x, z),
            gy_g: self.inst.grad_g_y(x, z),
        })
    }
}

/// Instance from the class constants: `β = 310ε/(L₁κ_y)`,
/// `T = ⌊155Δ/(12L₁β²)⌋`, `p = min{1, (23L₁β/(155σ))²}`.
pub fn build_stochastic(
    l1: f64,
    mu_y: f64,
    sigma: f64,
    delta: f64,
    eps: f64,
    rotation_seed: Option<u64>,
) -> Result<(StochasticHardInstance, LowerBoundPrediction)> {
    if sigma < 0.0 {
        return Err(Error::regime("sigma must be nonnegative"));
    }
    let kappa = l1 / mu_y;
    let beta = 310.0 * eps / (l1 * kappa);
    let t = (155.0 * delta / (12.0 * l1 * beta * beta)).floor() as usize;
    if t < 2 {
        return Err(Error::regime(format!(
            "chain length T = {t} < 2: eps too large for this Delta"
        )));
    }
    if t > 4000 {
        return Err(Error::regime(format!(
            "chain length T = {t} exceeds the dense desk-scale limit; increase eps"
        )));
    }
    let p_bern = if sigma == 0.0 {
        1.0
    } else {
        (23.0 * l1 * beta / (155.0 * sigma)).powi(2).min(1.0)
    };
    let inst = StochasticHardInstance::new(t, t, p_bern, beta, l1, mu_y, rotation_seed)?;
    let pred = LowerBoundPrediction::stochastic(kappa, l1, sigma, delta, eps);
    Ok((inst, pred))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.5), 0.0);
        assert_eq!(psi(0.0), 0.0);
        assert_eq!(psi(-3.0), 0.0);
        assert!((psi(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(psi_deriv(0.3), 0.0);
    }

    #[test]
    fn phi_matches_cdf() {
        let target = (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt();
        assert!((phi(0.0) - 0.5 * target).abs() < 1e-13);
        assert!(phi(-30.0).abs() < 1e-12);
        assert!((phi(30.0) - target).abs() < 1e-12);
    }

    #[test]
    fn chain_is_zero_chain() {
        let mut u = DVector::zeros(6);
        u[0] = 1.0;
        u[1] = 0.8;
        let (_, g) = stochastic_chain(&u);
        assert_eq!(prog(&g, 0.0), 3, "gradient reveals exactly the next slot");
    }

    #[test]
    fn sfo_spike_is_unbiased_by_construction() {
        let mut u = DVector::zeros(4);
        u[0] = 1.0;
        let p = 0.25;
        let g_hit = stochastic_chain_sfo(&u, p, true, 0.0);
        let g_miss = stochastic_chain_sfo(&u, p, false, 0.0);
        let (_, g) = stochastic_chain(&u);
        let mean = &g_hit * p + &g_miss * (1.0 - p);
        assert!((mean - &g).norm() < 1e-14);
        // only the prog+1 coordinate differs
        for i in 0..4 {
            if i != 1 {
                assert_eq!(g_hit[i], g[i]);
            }
        }
    }

    #[test]
    fn lower_level_rescales_by_kappa() {
        let inst = StochasticHardInstance::new(4, 4, 0.5, 0.3, 1.0, 0.25, None).unwrap();
        let x = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
        let z_star = crate::problem::lower_level_solution(&inst.quad, &x).unwrap();
        assert!((z_star - &x * inst.kappa_y()).norm() < 1e-12);
    }

    #[test]
    fn builder_follows_the_formulas() {
        let (inst, _) = build_stochastic(2.0, 0.5, 1.0, 8.0, 0.05, None).unwrap();
        let kappa = 4.0;
        let beta = 310.0 * 0.05 / (2.0 * kappa);
        assert!((inst.beta - beta).abs() < 1e-15);
        assert_eq!(inst.t, (155.0 * 8.0 / (12.0 * 2.0 * beta * beta)) as usize);
        let p = (23.0 * 2.0 * beta / 155.0f64).powi(2).min(1.0);
        assert!((inst.p_bern - p).abs() < 1e-15);
        assert!((inst.r_cap - 230.0 * (inst.t as f64).sqrt()).abs() < 1e-12);
    }
}
