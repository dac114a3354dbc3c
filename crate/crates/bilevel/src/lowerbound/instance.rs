//! The chain-structured bilevel hard instance.
//!
//! In chain coordinates the upper variable is `x ∈ R^T` and the lower
//! variable is `v = (z, y) ∈ R^{T + K(T−1)}`. The unscaled pair is
//!
//! ```text
//! f̄(x,z,y) = √ν/2 (z₁/√K − 1)² + ν Σ_{i=1}^T Υ_r(z_i/√K) + h(z,y)
//! ḡ(x,z,y) = 1/(2K²) ‖z‖² − ⟨x,z⟩ + Σ_{i=1}^{T−1} h_sc(x_i, x_{i+1}, y⁽ⁱ⁾)
//! ```
//!
//! with the coupling `h(z,y) = Σ a_K/2 (z_i² + z_{i+1}²) + b_K/2 (z_i y⁽ⁱ⁾₁ −
//! z_{i+1} y⁽ⁱ⁾_K)` and sub-chains `h_sc(x₁,x₂,y) = ½ yᵀ(I/K² + A_K) y −
//! (x₁y₁ − x₂y_K)`. The instance served to solvers is the rescaled (and
//! optionally block-rotated) pair `f = A·f̄(Qᵀ·/β)`, `g = A·ḡ(Qᵀ·/β)` with
//! amplitude `A = L₁β²/ℓ̄₁`.
//!
//! The lower level is quadratic, `z*(x) = K² x` in chain coordinates, and
//! the hyper-objective has the closed form `F(x) = A·f̄_chain(K^{3/2} Qₓᵀx/β)`
//! evaluated without any lower-level solve. The convex variant drops the
//! `Υ_r` terms (and may add `μₓ‖x‖²/2` to the upper level).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, random_orthogonal};
use crate::lowerbound::chains::{convex_chain, ChainLayout};
use crate::lowerbound::coeffs::{ab_coefficients, subchain_matrix};
use crate::lowerbound::upsilon::{grad_lipschitz, upsilon, upsilon_deriv, UpsilonParams};
use crate::problem::{BilevelProblem, QuadraticLowerLevel};
use crate::profile::SmoothnessProfile;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum ChainVariant {
    /// Nonconvex hyper-objective (Υ regularizer on the rescaling block).
    Nonconvex(UpsilonParams),
    /// Convex hyper-objective (regularizer removed).
    Convex,
}

/// Per-block orthogonal rotations `(Qₓ, Q_z, Q_y)`, seeded via QR of a
/// Gaussian matrix. Identity (None) is the audit mode: coordinates are
/// revealed one at a time in plain sight of the trace auditor.
#[derive(Debug, Clone)]
pub struct BlockRotation {
    pub qx: DMatrix<f64>,
    pub qz: DMatrix<f64>,
    pub qy: DMatrix<f64>,
}

impl BlockRotation {
    pub fn random(layout: ChainLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BlockRotation {
            qx: random_orthogonal(layout.dim_x(), &mut rng),
            qz: random_orthogonal(layout.dim_x(), &mut rng),
            qy: random_orthogonal(layout.dim_y_chain(), &mut rng),
        }
    }
}

/// Scalar parameters of a chain instance; everything else (matrices,
/// coefficients) is reconstructed deterministically from these.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChainParams {
    pub k: usize,
    pub t: usize,
    pub variant: ChainVariant,
    pub beta: f64,
    pub l1: f64,
    /// Strong convexity added to the hyper-objective (SC-SC only).
    pub mu_x: f64,
}

pub struct ChainInstance {
    pub layout: ChainLayout,
    pub params: ChainParams,
    pub a_k: f64,
    pub b_k: f64,
    /// Gradient-Lipschitz bound of the unscaled upper level
    /// (`1 + |a_K| + |b_K| + ν·sup|Υ''_r|` for the nonconvex variant).
    pub ell_bar_1: f64,
    /// `A = L₁ β² / ℓ̄₁`.
    pub amplitude: f64,
    rotation: Option<BlockRotation>,
    quad: QuadraticLowerLevel,
    profile: SmoothnessProfile,
    /// Largest eigenvalue of the unscaled lower-level Hessian.
    hbar_max_eig: f64,
}

impl ChainInstance {
    pub fn new(
        params: ChainParams,
        rotation: Option<BlockRotation>,
    ) -> Result<ChainInstance> {
        let layout = ChainLayout::new(params.t, params.k)?;
        if layout.dim_lower() > 4000 {
            return Err(Error::regime(format!(
                "lower-level dimension {} exceeds the dense desk-scale limit",
                layout.dim_lower()
            )));
        }
        let (a_k, b_k) = ab_coefficients(params.k)?;
        let ell_bar_1 = match params.variant {
            ChainVariant::Nonconvex(u) => 1.0 + a_k.abs() + b_k.abs() + u.nu * grad_lipschitz(u.r),
            ChainVariant::Convex => 1.0 + a_k.abs() + b_k.abs(),
        };
        let amplitude = params.l1 * params.beta * params.beta / ell_bar_1;
        let scale = params.l1 / ell_bar_1;

        // Dense (H, J, b) of the scaled lower level in chain coordinates.
        let t = params.t;
        let k = params.k;
        let dy = layout.dim_lower();
        let mut h = DMatrix::zeros(dy, dy);
        let inv_k2 = 1.0 / (k * k) as f64;
        for i in 0..t {
            h[(i, i)] = scale * inv_k2;
        }
        let sub = subchain_matrix(k) * scale;
        for c in 0..t - 1 {
            let off = t + c * k;
            h.view_mut((off, off), (k, k)).copy_from(&sub);
        }
        let mut j = DMatrix::zeros(t, dy);
        for i in 0..t {
            j[(i, i)] = -scale;
        }
        for c in 0..t - 1 {
            let off = t + c * k;
            j[(c, off)] -= scale;
            j[(c + 1, off + k - 1)] += scale;
        }
        let b = DVector::zeros(dy);
        let (h, j) = match &rotation {
            None => (h, j),
            Some(rot) => {
                let mut rv = DMatrix::zeros(dy, dy);
                rv.view_mut((0, 0), (t, t)).copy_from(&rot.qz);
                rv.view_mut((t, t), (dy - t, dy - t)).copy_from(&rot.qy);
                (&rv * h * rv.transpose(), &rot.qx * j * rv.transpose())
            }
        };
        let quad = QuadraticLowerLevel::new((&h + h.transpose()) * 0.5, j, b)?;

        let hbar_max_eig = linalg::sym_max_eig(&subchain_matrix(k)).max(inv_k2);
        let mu_y_eff = scale * inv_k2;

        // Hessian-Lipschitz constant of f (only the Υ terms contribute).
        let l2 = match params.variant {
            ChainVariant::Nonconvex(u) => {
                let lam2 = crate::lowerbound::upsilon::hess_lipschitz(u.r);
                scale / params.beta * u.nu * lam2 / (k as f64).powf(1.5)
            }
            ChainVariant::Convex => 0.0,
        };
        let profile = SmoothnessProfile {
            order: 1,
            l: vec![f64::INFINITY, params.l1, l2],
            mu_y: mu_y_eff,
            mu_x: params.mu_x,
            delta: 0.0,
        };

        let mut inst = ChainInstance {
            layout,
            params,
            a_k,
            b_k,
            ell_bar_1,
            amplitude,
            rotation,
            quad,
            profile,
            hbar_max_eig,
        };
        let zero = DVector::zeros(inst.layout.dim_x());
        inst.profile.delta = inst.hyper_objective(&zero).0 - inst.hyper_minimum_value();
        Ok(inst)
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn t(&self) -> usize {
        self.params.t
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    pub fn rotation(&self) -> Option<&BlockRotation> {
        &self.rotation
    }

    /// Effective strong-convexity modulus of the scaled lower level
    /// (`L₁/(ℓ̄₁ K²)`, exact).
    pub fn mu_y_effective(&self) -> f64 {
        self.profile.mu_y
    }

    /// Condition number of the instance actually served to solvers.
    pub fn kappa_effective(&self) -> f64 {
        self.params.l1 / self.mu_y_effective()
    }

    fn chain_x(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.rotation {
            None => x.clone(),
            Some(r) => r.qx.transpose() * x,
        }
    }

    fn chain_lower(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let t = self.params.t;
        let z = v.rows(0, t).into_owned();
        let y = v.rows(t, self.layout.dim_y_chain()).into_owned();
        match &self.rotation {
            None => (z, y),
            Some(r) => (r.qz.transpose() * z, r.qy.transpose() * y),
        }
    }

    /// Coupling term `h(z, y)` of the unscaled upper level.
    pub fn coupling_h(&self, z: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let k = self.params.k;
        let mut acc = 0.0;
        for i in 0..self.params.t - 1 {
            let y1 = y[i * k];
            let yk = y[i * k + k - 1];
            acc += 0.5 * self.a_k * (z[i] * z[i] + z[i + 1] * z[i + 1]);
            acc += 0.5 * self.b_k * (z[i] * y1 - z[i + 1] * yk);
        }
        acc
    }

    /// Unscaled upper level `f̄` and its gradient w.r.t. `(z, y)` in chain
    /// coordinates (it does not depend on `x`).
    fn fbar(&self, z: &DVector<f64>, y: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>) {
        let t = self.params.t;
        let k = self.params.k;
        let sqrt_k = (k as f64).sqrt();
        let mut gz = DVector::zeros(t);
        let mut gy = DVector::zeros(self.layout.dim_y_chain());

        let mut value = match self.params.variant {
            ChainVariant::Nonconvex(u) => {
                let head = u.nu.sqrt() * 0.5 * (z[0] / sqrt_k - 1.0).powi(2);
                gz[0] += u.nu.sqrt() * (z[0] / sqrt_k - 1.0) / sqrt_k;
                let mut acc = head;
                for i in 0..t {
                    acc += u.nu * upsilon(z[i] / sqrt_k, u.r);
                    gz[i] += u.nu * upsilon_deriv(z[i] / sqrt_k, u.r) / sqrt_k;
                }
                acc
            }
            ChainVariant::Convex => {
                gz[0] += (z[0] / sqrt_k - 1.0) / sqrt_k;
                0.5 * (z[0] / sqrt_k - 1.0).powi(2)
            }
        };

        value += self.coupling_h(z, y);
        for i in 0..t - 1 {
            gz[i] += self.a_k * z[i] + 0.5 * self.b_k * y[i * k];
            gz[i + 1] += self.a_k * z[i + 1] - 0.5 * self.b_k * y[i * k + k - 1];
            gy[i * k] += 0.5 * self.b_k * z[i];
            gy[i * k + k - 1] -= 0.5 * self.b_k * z[i + 1];
        }
        (value, gz, gy)
    }

    /// Closed-form hyper-objective `(F(x), ∇F(x))`, no lower-level solve.
    ///
    /// For the nonconvex variant the Υ sum runs over all `T` rescaling
    /// coordinates, matching the upper level as implemented.
    pub fn hyper_objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let t = self.params.t;
        let k32 = (self.params.k as f64).powf(1.5);
        let u = self.chain_x(x) * (k32 / self.params.beta);

        let (mut value, mut grad_u) = match self.params.variant {
            ChainVariant::Nonconvex(p) => {
                let mut val = 0.5 * p.nu.sqrt() * (u[0] - 1.0).powi(2);
                let mut g = DVector::zeros(t);
                g[0] = p.nu.sqrt() * (u[0] - 1.0);
                for i in 1..t {
                    let d = u[i] - u[i - 1];
                    val += 0.5 * d * d;
                    g[i] += d;
                    g[i - 1] -= d;
                }
                for i in 0..t {
                    val += p.nu * upsilon(u[i], p.r);
                    g[i] += p.nu * upsilon_deriv(u[i], p.r);
                }
                (val, g)
            }
            ChainVariant::Convex => convex_chain(&u),
        };

        value *= self.amplitude;
        grad_u *= self.amplitude * k32 / self.params.beta;
        let mut grad = match &self.rotation {
            None => grad_u,
            Some(r) => &r.qx * grad_u,
        };
        if self.params.mu_x > 0.0 {
            value += 0.5 * self.params.mu_x * x.norm_squared();
            grad += self.params.mu_x * x;
        }
        (value, grad)
    }

    /// Infimum of the hyper-objective. Zero except for the strongly convex
    /// variant, where it is evaluated at the dense closed-form minimizer.
    pub fn hyper_minimum_value(&self) -> f64 {
        if self.params.mu_x == 0.0 {
            // Both chain variants are sums of squares plus nonnegative Υ
            // terms, minimized exactly at u = 1.
            0.0
        } else {
            let x_star = self
                .strongly_convex_minimizer()
                .expect("mu_x > 0 has a unique minimizer");
            self.hyper_objective(&x_star).0
        }
    }

    /// Dense closed-form Hessian of the convex hyper-objective (the
    /// nonconvex variant has no constant Hessian).
    pub fn hyper_hessian_convex(&self) -> Option<DMatrix<f64>> {
        if !matches!(self.params.variant, ChainVariant::Convex) {
            return None;
        }
        let t = self.params.t;
        let k3 = (self.params.k as f64).powi(3);
        let mut core = crate::lowerbound::coeffs::tridiag_a(t);
        core[(0, 0)] += 1.0;
        let mut hess =
            core * (self.amplitude * k3 / (self.params.beta * self.params.beta));
        if let Some(r) = &self.rotation {
            hess = &r.qx * hess * r.qx.transpose();
        }
        for i in 0..t {
            hess[(i, i)] += self.params.mu_x;
        }
        Some(hess)
    }

    /// Exact minimizer of the strongly convex variant via a dense solve.
    pub fn strongly_convex_minimizer(&self) -> Option<DVector<f64>> {
        if self.params.mu_x == 0.0 {
            return None;
        }
        let hess = self.hyper_hessian_convex()?;
        // ∇F(x) = Hess·x + c with c = ∇F(0).
        let zero = DVector::zeros(self.params.t);
        let c = self.hyper_objective(&zero).1;
        linalg::spd_solve(&hess, &(-c)).ok()
    }

    /// Geometric approximation `x̃*_i = (β/K^{3/2}) q^i` of the strongly
    /// convex minimizer, with `q` the stable root of `−1 + (2+α)q − q² = 0`
    /// and `α = ℓ̄₁ μₓ/(L₁K³)`. Returns `(x̃*, q, residual bound)` in ambient
    /// coordinates; the residual bound is `β q^{T+1}/(K³ α)`.
    pub fn geometric_minimizer(&self) -> Option<(DVector<f64>, f64, f64)> {
        if self.params.mu_x == 0.0 || !matches!(self.params.variant, ChainVariant::Convex) {
            return None;
        }
        let k3 = (self.params.k as f64).powi(3);
        let alpha = self.ell_bar_1 * self.params.mu_x / (self.params.l1 * k3);
        let q = 0.5 * (2.0 + alpha - (alpha * alpha + 4.0 * alpha).sqrt());
        let k32 = (self.params.k as f64).powf(1.5);
        let chain = DVector::from_fn(self.params.t, |i, _| {
            self.params.beta / k32 * q.powi(i as i32 + 1)
        });
        let x = match &self.rotation {
            None => chain,
            Some(r) => &r.qx * chain,
        };
        let bound = self.params.beta * q.powi(self.params.t as i32 + 1) / (k3 * alpha);
        Some((x, q, bound))
    }

    /// Reference gradient-norm floor: while the last two `x` slots are
    /// inactive, `‖∇F‖` exceeds `L₁ β K^{3/2} ν^{3/4} / (4 ℓ̄₁)`.
    pub fn gradient_floor(&self) -> Option<f64> {
        match self.params.variant {
            ChainVariant::Nonconvex(u) => Some(
                self.params.l1 * self.params.beta * (self.params.k as f64).powf(1.5)
                    * u.nu.powf(0.75)
                    / (4.0 * self.ell_bar_1),
            ),
            ChainVariant::Convex => None,
        }
    }

    /// Dense lower-level solve in chain coordinates for the identity
    /// instance: returns `(z*, y*)` of the unscaled problem at chain `x̄`.
    /// Kept for reference checks; solvers use the scaled `(H, J, b)` route.
    pub fn unscaled_lower_solution(&self, x_chain: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let k = self.params.k;
        let t = self.params.t;
        let z = x_chain * (k * k) as f64;
        let sub = subchain_matrix(k);
        let factor = crate::linalg::SpdFactor::new(&sub).expect("sub-chain matrix is SPD");
        let mut y = DVector::zeros(k * (t - 1));
        for i in 0..t - 1 {
            let mut rhs = DVector::zeros(k);
            rhs[0] = x_chain[i];
            rhs[k - 1] = -x_chain[i + 1];
            y.rows_mut(i * k, k).copy_from(&factor.solve(&rhs));
        }
        (z, y)
    }
}

impl BilevelProblem for ChainInstance {
    fn dim_x(&self) -> usize {
        self.layout.dim_x()
    }

    fn dim_y(&self) -> usize {
        self.layout.dim_lower()
    }

    fn profile(&self) -> &SmoothnessProfile {
        &self.profile
    }

    fn f(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let (z, y) = self.chain_lower(v);
        let (val, _, _) = self.fbar(&(z / self.params.beta), &(y / self.params.beta));
        let mut out = self.amplitude * val;
        if self.params.mu_x > 0.0 {
            out += 0.5 * self.params.mu_x * x.norm_squared();
        }
        out
    }

    fn g(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.quad.value(x, v)
    }

    fn grad_f_x(&self, x: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        if self.params.mu_x > 0.0 {
            x * self.params.mu_x
        } else {
            DVector::zeros(x.len())
        }
    }

    fn grad_f_y(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (z, y) = self.chain_lower(v);
        let (_, gz, gy) = self.fbar(&(z / self.params.beta), &(y / self.params.beta));
        let s = self.amplitude / self.params.beta;
        let t = self.params.t;
        let mut out = DVector::zeros(self.layout.dim_lower());
        match &self.rotation {
            None => {
                out.rows_mut(0, t).copy_from(&(gz * s));
                out.rows_mut(t, self.layout.dim_y_chain()).copy_from(&(gy * s));
            }
            Some(r) => {
                out.rows_mut(0, t).copy_from(&(&r.qz * gz * s));
                out.rows_mut(t, self.layout.dim_y_chain())
                    .copy_from(&(&r.qy * gy * s));
            }
        }
        out
    }

    fn grad_g_x(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.quad.grad_x(x, v)
    }

    fn grad_g_y(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.quad.grad_y(x, v)
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
        Some(self.hyper_objective(x).1)
    }

    fn lower_curvature(&self, _x: &DVector<f64>) -> (f64, f64) {
        let scale = self.params.l1 / self.ell_bar_1;
        (scale * self.hbar_max_eig, self.profile.mu_y)
    }
}
