//! Synthetic problem generators: random quadratic-lower-level instances with
//! controlled condition number, plus small closed-form toys used by the
//! benchmark harness and tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::linalg::{self, random_orthogonal};
use crate::problem::{BilevelProblem, QuadraticLowerLevel};
use crate::profile::SmoothnessProfile;

/// Bilevel problem with a quadratic upper level over the stacked `(x, y)`
/// variable and a quadratic lower level `(H, J, b)`.
///
/// `f(x,y) = ½ wᵀ Q w + qᵀ w` with `w = (x, y)`; the hyper-objective is the
/// quadratic `F(x) = ½ xᵀ Hess_F x + c_Fᵀ x + const` with closed-form
/// `Hess_F` and `c_F` exposed for reference checks.
pub struct QuadraticBilevel {
    pub lower: QuadraticLowerLevel,
    pub q_upper: DMatrix<f64>,
    pub q_linear: DVector<f64>,
    profile: SmoothnessProfile,
}

impl QuadraticBilevel {
    pub fn new(
        lower: QuadraticLowerLevel,
        q_upper: DMatrix<f64>,
        q_linear: DVector<f64>,
        profile: SmoothnessProfile,
    ) -> Self {
        let d = lower.dim_x() + lower.dim_y();
        assert_eq!(q_upper.nrows(), d);
        assert_eq!(q_linear.len(), d);
        QuadraticBilevel {
            lower,
            q_upper,
            q_linear,
            profile,
        }
    }

    fn split(&self, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let dx = self.lower.dim_x();
        (
            w.rows(0, dx).into_owned(),
            w.rows(dx, self.lower.dim_y()).into_owned(),
        )
    }

    fn stack(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(x.len() + y.len());
        w.rows_mut(0, x.len()).copy_from(x);
        w.rows_mut(x.len(), y.len()).copy_from(y);
        w
    }

    /// Affine map of the lower-level solution: `y*(x) = S x + s0`.
    pub fn solution_map(&self) -> (DMatrix<f64>, DVector<f64>) {
        let factor = self.lower.factor().expect("H is SPD by construction");
        let s = -factor.solve_mat(&self.lower.j.transpose());
        let s0 = -factor.solve(&self.lower.b);
        (s, s0)
    }

    /// Closed-form Hessian and affine part of the quadratic hyper-objective,
    /// derived by composing `f` with the affine solution map. This route is
    /// algebraically independent of [`crate::problem::exact_hypergradient`].
    pub fn hyper_quadratic(&self) -> (DMatrix<f64>, DVector<f64>) {
        let dx = self.lower.dim_x();
        let dy = self.lower.dim_y();
        let (s, s0) = self.solution_map();
        let qxx = self.q_upper.view((0, 0), (dx, dx)).into_owned();
        let qxy = self.q_upper.view((0, dx), (dx, dy)).into_owned();
        let qyy = self.q_upper.view((dx, dx), (dy, dy)).into_owned();
        let hess = &qxx + &qxy * &s + s.transpose() * qxy.transpose() + s.transpose() * &qyy * &s;
        let qx = self.q_linear.rows(0, dx).into_owned();
        let qy = self.q_linear.rows(dx, dy).into_owned();
        let c = &qxy * &s0 + s.transpose() * (&qyy * &s0) + qx + s.transpose() * qy;
        (hess, c)
    }

    pub fn hyper_grad_closed(&self, x: &DVector<f64>) -> DVector<f64> {
        let (hess, c) = self.hyper_quadratic();
        hess * x + c
    }

    /// Minimizer and minimum of `F` when `Hess_F` is positive definite.
    pub fn hyper_minimum(&self) -> Option<(DVector<f64>, f64)> {
        let (hess, c) = self.hyper_quadratic();
        let x_star = linalg::spd_solve(&hess, &(-&c)).ok()?;
        let (s, s0) = self.solution_map();
        let y_star = &s * &x_star + s0;
        Some((x_star.clone(), self.f(&x_star, &y_star)))
    }
}

impl BilevelProblem for QuadraticBilevel {
    fn dim_x(&self) -> usize {
        self.lower.dim_x()
    }
    fn dim_y(&self) -> usize {
        self.lower.dim_y()
    }
    fn profile(&self) -> &SmoothnessProfile {
        &self.profile
    }
    fn f(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let w = self.stack(x, y);
        0.5 * w.dot(&(&self.q_upper * &w)) + self.q_linear.dot(&w)
    }
    fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.lower.value(x, y)
    }
    fn grad_f_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let w = self.stack(x, y);
        let g = &self.q_upper * w + &self.q_linear;
        self.split(&g).0
    }
    fn grad_f_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let w = self.stack(x, y);
        let g = &self.q_upper * w + &self.q_linear;
        self.split(&g).1
    }
    fn grad_g_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.lower.grad_x(x, y)
    }
    fn grad_g_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.lower.grad_y(x, y)
    }
    fn hess_g_xy_v(
        &self,
        _x: &DVector<f64>,
        _y: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(&self.lower.j * v)
    }
    fn hess_g_yy_v(
        &self,
        _x: &DVector<f64>,
        _y: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(&self.lower.h * v)
    }
    fn has_second_order(&self) -> bool {
        true
    }
    fn quadratic_lower(&self) -> Option<&QuadraticLowerLevel> {
        Some(&self.lower)
    }
}

/// Random quadratic-lower-level instance with `L_1 = 1` and
/// `kappa_y = L_1 / mu_y` as requested. The hyper-objective is made convex
/// (bounded below) so that descent runs have a well-defined `Delta`.
pub fn random_quadratic_bilevel(
    dx: usize,
    dy: usize,
    kappa_y: f64,
    seed: u64,
) -> QuadraticBilevel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = 1.0 / kappa_y;

    // H: spectrum log-spaced in [mu, 1] in a random orthogonal basis, with
    // the extremes pinned so kappa is exact.
    let u = random_orthogonal(dy, &mut rng);
    let eigs = DVector::from_fn(dy, |i, _| {
        if i == 0 {
            mu
        } else if i == dy - 1 {
            1.0
        } else {
            let t = i as f64 / (dy - 1) as f64;
            mu * (1.0 / mu).powf(t)
        }
    });
    let h = &u * DMatrix::from_diagonal(&eigs) * u.transpose();
    let h = (&h + h.transpose()) * 0.5;

    let mut j = DMatrix::from_fn(dx, dy, |_, _| linalg::standard_normal(&mut rng));
    let jn = linalg::op_norm(&j);
    if jn > 0.0 {
        j *= 0.5 / jn;
    }
    let b = linalg::gaussian_vector(dy, &mut rng) * 0.5;
    let lower = QuadraticLowerLevel::new(h, j, b).unwrap();

    // Random symmetric upper level with norm <= 1, then shift the xx block so
    // the hyper-objective Hessian is positive definite.
    let d = dx + dy;
    let m = DMatrix::from_fn(d, d, |_, _| linalg::standard_normal(&mut rng));
    let mut q = (&m + m.transpose()) * 0.5;
    let qn = linalg::sym_op_norm(&q);
    if qn > 0.0 {
        q *= 0.45 / qn;
    }
    let q_linear = linalg::gaussian_vector(d, &mut rng) * 0.3;

    let profile = SmoothnessProfile::first_order(f64::INFINITY, 1.0, 0.0, mu, 0.0);
    let mut problem = QuadraticBilevel::new(lower, q, q_linear, profile);
    let (hess_f, _) = problem.hyper_quadratic();
    let min_eig = linalg::sym_min_eig(&hess_f);
    let target = 0.05;
    if min_eig < target {
        for i in 0..dx {
            problem.q_upper[(i, i)] += target - min_eig;
        }
        // Keep f's gradient Lipschitz constant within the profile's L_1 = 1.
        let qn = linalg::sym_op_norm(&problem.q_upper);
        if qn > 1.0 {
            problem.q_upper /= qn;
            problem.q_linear /= qn;
        }
    }
    let (_, min_f) = problem
        .hyper_minimum()
        .expect("hyper-objective is convex after the shift");
    let zero = DVector::zeros(dx);
    let y0 = crate::problem::lower_level_solution(&problem.lower, &zero).unwrap();
    problem.profile.delta = problem.f(&zero, &y0) - min_f;
    problem
}

/// `f = ½‖x‖² + ½‖y‖²`, `g = ½‖y‖²`: fully decoupled, `F(x) = ½‖x‖²`.
pub fn decoupled_toy(d: usize) -> QuadraticBilevel {
    let lower = QuadraticLowerLevel::new(
        DMatrix::identity(d, d),
        DMatrix::zeros(d, d),
        DVector::zeros(d),
    )
    .unwrap();
    let q = DMatrix::identity(2 * d, 2 * d);
    let profile = SmoothnessProfile::first_order(f64::INFINITY, 1.0, 0.0, 1.0, 0.5);
    QuadraticBilevel::new(lower, q, DVector::zeros(2 * d), profile)
}

/// Strict-saddle toy for second-order stationarity checks.
///
/// `F(x) = ½(x₁² + x₂² + x₃²) + δ(x₄⁴/4 − x₄²/2) + tilt·x₁` has a strict
/// saddle at (approximately) the origin with `∇²F(0) = diag(1, 1, 1, −δ)`
/// and two basins at `x₄ = ±1` where `λ_min(∇²F) = 2δ > 0`. The lower level
/// is trivial (`g = ½‖y‖²`, `y*(x) = 0`) so `F` coincides with `f(·, y*)`.
///
/// The small tilt keeps the gradient at the origin nonzero, which mirrors
/// the inexactness a penalty estimator always carries and lets the restart
/// counter of momentum solvers engage instead of idling at the exact saddle.
pub struct SaddleToy {
    pub delta: f64,
    pub tilt: f64,
    lower: QuadraticLowerLevel,
    q_lin_y: DVector<f64>,
    profile: SmoothnessProfile,
}

impl SaddleToy {
    pub fn new(delta: f64, tilt: f64) -> Self {
        let dy = 2;
        let lower = QuadraticLowerLevel::new(
            DMatrix::identity(dy, dy),
            DMatrix::zeros(4, dy),
            DVector::zeros(dy),
        )
        .unwrap();
        SaddleToy {
            delta,
            tilt,
            lower,
            q_lin_y: DVector::from_element(dy, 0.1),
            profile: SmoothnessProfile {
                order: 2,
                l: vec![f64::INFINITY, 1.1, 1.2, 0.0],
                mu_y: 1.0,
                mu_x: 0.0,
                delta: delta / 4.0,
            },
        }
    }

    fn hyper_value(&self, x: &DVector<f64>) -> f64 {
        let quad = 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        let x4 = x[3];
        quad + self.delta * (x4.powi(4) / 4.0 - x4 * x4 / 2.0) + self.tilt * x[0]
    }

    fn hyper_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(4);
        g[0] = x[0] + self.tilt;
        g[1] = x[1];
        g[2] = x[2];
        g[3] = self.delta * (x[3].powi(3) - x[3]);
        g
    }

    /// Hessian-Lipschitz constant of `F` on the box `|x₄| ≤ 2` where all
    /// trajectories of interest live (`|F'''| = 6δ|x₄| ≤ 12δ`).
    pub fn rho_f(&self) -> f64 {
        12.0 * self.delta
    }

    /// Gradient-Lipschitz constant of `F` on the same region.
    pub fn l_f(&self) -> f64 {
        (self.delta * 11.0).max(1.0)
    }
}

impl BilevelProblem for SaddleToy {
    fn dim_x(&self) -> usize {
        4
    }
    fn dim_y(&self) -> usize {
        self.lower.dim_y()
    }
    fn profile(&self) -> &SmoothnessProfile {
        &self.profile
    }
    fn f(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.hyper_value(x) + self.q_lin_y.dot(y)
    }
    fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.lower.value(x, y)
    }
    fn grad_f_x(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        self.hyper_grad(x)
    }
    fn grad_f_y(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        self.q_lin_y.clone()
    }
    fn grad_g_x(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn grad_g_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.lower.grad_y(x, y)
    }
    fn hess_g_xy_v(
        &self,
        _x: &DVector<f64>,
        _y: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(&self.lower.j * v)
    }
    fn hess_g_yy_v(
        &self,
        _x: &DVector<f64>,
        _y: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(&self.lower.h * v)
    }
    fn has_second_order(&self) -> bool {
        true
    }
    fn quadratic_lower(&self) -> Option<&QuadraticLowerLevel> {
        Some(&self.lower)
    }
    fn reference_hypergradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.hyper_grad(x))
    }
}

/// Random SPD quadratic `h(z) = ½ zᵀ A z − cᵀ z` with exact condition number
/// `kappa`, for inner-solver benchmarks.
pub struct SpdQuadratic {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub l: f64,
    pub mu: f64,
}

impl SpdQuadratic {
    pub fn random(d: usize, kappa: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_orthogonal(d, &mut rng);
        let eigs = DVector::from_fn(d, |i, _| {
            if i == 0 {
                1.0 / kappa
            } else if i == d - 1 {
                1.0
            } else {
                let t = rng.gen::<f64>();
                (1.0 / kappa) * kappa.powf(t)
            }
        });
        let a = &u * DMatrix::from_diagonal(&eigs) * u.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let c = linalg::gaussian_vector(d, &mut rng);
        SpdQuadratic {
            a,
            c,
            l: 1.0,
            mu: 1.0 / kappa,
        }
    }

    pub fn grad(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a * z - &self.c
    }

    pub fn minimizer(&self) -> DVector<f64> {
        linalg::spd_solve(&self.a, &self.c).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::exact_hypergradient;

    #[test]
    fn generator_hits_requested_kappa() {
        let p = random_quadratic_bilevel(6, 8, 100.0, 1);
        p.lower.check_bounds(0.01, 1.0, 1e-9).unwrap();
        assert!(p.profile().delta > 0.0);
    }

    #[test]
    fn closed_form_matches_exact_hypergradient() {
        for seed in 0..5 {
            let p = random_quadratic_bilevel(5, 7, 30.0, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x = linalg::gaussian_vector(5, &mut rng);
            let g1 = exact_hypergradient(&p, &x).unwrap();
            let g2 = p.hyper_grad_closed(&x);
            assert!(
                (g1.clone() - &g2).norm() <= 1e-10 * (1.0 + g1.norm()),
                "routes disagree: {}",
                (g1 - g2).norm()
            );
        }
    }

    #[test]
    fn independent_f_gives_identity_hypergradient() {
        // f(x, y) = ½‖x‖² independent of y: ∇F(x) = x.
        let p = decoupled_toy(3);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.25]);
        let g = exact_hypergradient(&p, &x).unwrap();
        assert!((g - &x).norm() < 1e-14);
    }

    #[test]
    fn linear_in_y_substitution() {
        // f(x,y) = cᵀy, g = ½‖y‖² − xᵀy: y*(x) = x, ∇F(x) = c.
        let d = 4;
        let lower = QuadraticLowerLevel::new(
            DMatrix::identity(d, d),
            -DMatrix::identity(d, d),
            DVector::zeros(d),
        )
        .unwrap();
        let c = DVector::from_vec(vec![2.0, -1.0, 0.5, 3.0]);
        let mut q_linear = DVector::zeros(2 * d);
        q_linear.rows_mut(d, d).copy_from(&c);
        let profile = SmoothnessProfile::first_order(f64::INFINITY, 1.0, 0.0, 1.0, 0.0);
        let p = QuadraticBilevel::new(lower, DMatrix::zeros(2 * d, 2 * d), q_linear, profile);
        let x = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.7]);
        let y_star = crate::problem::lower_level_solution(&p.lower, &x).unwrap();
        assert!((y_star - &x).norm() < 1e-14);
        let g = exact_hypergradient(&p, &x).unwrap();
        assert!((g - &c).norm() < 1e-14);
    }

    #[test]
    fn saddle_toy_shape() {
        let toy = SaddleToy::new(0.1, 0.0);
        let zero = DVector::zeros(4);
        let g = toy.hyper_grad(&zero);
        assert_eq!(g.norm(), 0.0);
        // the two basins are stationary
        let mut basin = DVector::zeros(4);
        basin[3] = 1.0;
        assert!(toy.hyper_grad(&basin).norm() < 1e-14);
        assert!(toy.hyper_value(&basin) < toy.hyper_value(&zero));
    }
}
