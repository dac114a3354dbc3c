//! Problem abstractions and exact reference computations.
//!
//! A [`BilevelProblem`] exposes values and gradients of the upper-level
//! objective `f(x, y)` and lower-level objective `g(x, y)`. Problems with a
//! quadratic lower level additionally expose the `(H, J, b)` triple, which
//! enables an exact lower-level solution `y*(x)` and the exact hypergradient
//!
//! `∇F(x) = ∇ₓf(x, y*(x)) − J H⁻¹ ∇_y f(x, y*(x))`.
//!
//! Reference computations never touch oracle tallies; they exist so that
//! solver output can be judged against ground truth.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::profile::SmoothnessProfile;

/// Evaluation contract for a bilevel problem `min_x f(x, y*(x))`,
/// `y*(x) = argmin_y g(x, y)`.
///
/// All evaluators are pure: the same input yields the same output. Gradients
/// must have dimensions `dim_x` / `dim_y` respectively.
pub trait BilevelProblem: Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn profile(&self) -> &SmoothnessProfile;

    fn f(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64;
    fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64;
    fn grad_f_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    fn grad_f_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    fn grad_g_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    fn grad_g_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    /// `∇²ₓᵧ g(x,y) · v`, when the problem exposes second-order products.
    fn hess_g_xy_v(
        &self,
        _x: &DVector<f64>,
        _y: &DVector<f64>,
        _v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        None
    }

    /// `∇²ᵧᵧ g(x,y) · v`, when the problem exposes second-order products.
    fn hess_g_yy_v(
        &self,
        _x: &DVector<f64>,
        _y: &DVector<f64>,
        _v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        None
    }

    fn has_second_order(&self) -> bool {
        false
    }

    /// The `(H, J, b)` triple when the lower level is quadratic.
    fn quadratic_lower(&self) -> Option<&QuadraticLowerLevel> {
        None
    }

    /// Closed-form reference hypergradient, when one exists that does not go
    /// through the generic dense solve (hard instances, closed-form
    /// applications). Used by the harness for reference `‖∇F‖` columns.
    fn reference_hypergradient(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// Smoothness and strong convexity of `g(x, ·)` at a given `x`, used to
    /// configure inner solvers. Defaults to the profile constants; problems
    /// whose lower-level curvature depends on `x` override this.
    fn lower_curvature(&self, _x: &DVector<f64>) -> (f64, f64) {
        (self.profile().l1(), self.profile().mu_y)
    }
}

/// Reference hypergradient for any problem: prefers a problem-specific closed
/// form, falls back to the quadratic-lower-level exact computation.
pub fn reference_hypergradient<P: BilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
) -> Option<DVector<f64>> {
    if let Some(g) = problem.reference_hypergradient(x) {
        return Some(g);
    }
    if problem.quadratic_lower().is_some() {
        return exact_hypergradient(problem, x).ok();
    }
    None
}

/// Quadratic lower level `g(x, y) = ½ yᵀH y + xᵀJ y + bᵀy`.
///
/// `H` is `d_y × d_y` symmetric with `mu_y·I ⪯ H ⪯ L_1·I`, `J` is
/// `d_x × d_y` with operator norm at most `L_1`.
#[derive(Debug, Clone)]
pub struct QuadraticLowerLevel {
    pub h: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QuadraticLowerLevel {
    pub fn new(h: DMatrix<f64>, j: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let dy = h.nrows();
        if h.ncols() != dy {
            return Err(Error::DimensionMismatch {
                what: "QuadraticLowerLevel H (square)",
                expected: dy,
                got: h.ncols(),
            });
        }
        if (&h - h.transpose()).norm() > 1e-10 * (1.0 + h.norm()) {
            return Err(Error::data("H must be symmetric"));
        }
        if j.ncols() != dy {
            return Err(Error::DimensionMismatch {
                what: "QuadraticLowerLevel J columns",
                expected: dy,
                got: j.ncols(),
            });
        }
        linalg::check_dim(&b, dy, "QuadraticLowerLevel b")?;
        Ok(QuadraticLowerLevel { h, j, b })
    }

    pub fn dim_x(&self) -> usize {
        self.j.nrows()
    }

    pub fn dim_y(&self) -> usize {
        self.h.nrows()
    }

    /// Checks the eigenvalue bounds `mu_y·I ⪯ H ⪯ L_1·I` and `‖J‖ ≤ L_1`.
    pub fn check_bounds(&self, mu_y: f64, l1: f64, rtol: f64) -> Result<()> {
        let min = linalg::sym_min_eig(&self.h);
        let max = linalg::sym_max_eig(&self.h);
        if min < mu_y * (1.0 - rtol) {
            return Err(Error::regime(format!(
                "lambda_min(H) = {min} below mu_y = {mu_y}"
            )));
        }
        if max > l1 * (1.0 + rtol) {
            return Err(Error::regime(format!(
                "lambda_max(H) = {max} above L_1 = {l1}"
            )));
        }
        let jn = linalg::op_norm(&self.j);
        if jn > l1 * (1.0 + rtol) {
            return Err(Error::regime(format!("‖J‖ = {jn} above L_1 = {l1}")));
        }
        Ok(())
    }

    pub fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.h * y)) + x.dot(&(&self.j * y)) + self.b.dot(y)
    }

    pub fn grad_x(&self, _x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.j * y
    }

    pub fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.h * y + self.j.transpose() * x + &self.b
    }

    pub fn factor(&self) -> Result<SpdFactor> {
        SpdFactor::new(&self.h)
    }
}

/// Solves `H y + Jᵀx + b = 0` for the lower-level minimizer `y*(x)` via a
/// dense symmetric positive-definite factorization.
pub fn lower_level_solution(q: &QuadraticLowerLevel, x: &DVector<f64>) -> Result<DVector<f64>> {
    linalg::check_dim(x, q.dim_x(), "lower_level_solution x")?;
    let rhs = -(q.j.transpose() * x + &q.b);
    Ok(q.factor()?.solve(&rhs))
}

/// Exact hypergradient `∇F(x) = ∇ₓf(x,y*) − J H⁻¹ ∇ᵧf(x,y*)` for problems
/// with a quadratic lower level. This is a reference computation: it does not
/// increment any oracle tally.
pub fn exact_hypergradient<P: BilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let quad = problem
        .quadratic_lower()
        .ok_or(Error::MissingCapability("a quadratic lower level"))?;
    let y_star = lower_level_solution(quad, x)?;
    let gx = problem.grad_f_x(x, &y_star);
    let gy = problem.grad_f_y(x, &y_star);
    let hinv_gy = quad.factor()?.solve(&gy);
    Ok(gx - &quad.j * hinv_gy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_quad(dx: usize, dy: usize, seed: u64) -> QuadraticLowerLevel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(dy, dy, |_, _| linalg::standard_normal(&mut rng));
        let h = &m * m.transpose() + DMatrix::identity(dy, dy);
        let j = DMatrix::from_fn(dx, dy, |_, _| 0.3 * linalg::standard_normal(&mut rng));
        let b = linalg::gaussian_vector(dy, &mut rng);
        QuadraticLowerLevel::new(h, j, b).unwrap()
    }

    #[test]
    fn identity_lower_level() {
        // H = I, J = 0, b = 0 -> y* = 0
        let q = QuadraticLowerLevel::new(
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 3),
            DVector::zeros(3),
        )
        .unwrap();
        let y = lower_level_solution(&q, &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(y.norm() == 0.0);

        // H = I, J = -I, b = 0 -> y*(x) = x
        let q = QuadraticLowerLevel::new(
            DMatrix::identity(3, 3),
            -DMatrix::identity(3, 3),
            DVector::zeros(3),
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = lower_level_solution(&q, &x).unwrap();
        assert!((y - x).norm() < 1e-14);
    }

    #[test]
    fn lower_level_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for seed in 0..20 {
            let q = random_quad(5, 9, seed);
            let x = linalg::gaussian_vector(5, &mut rng);
            let y = lower_level_solution(&q, &x).unwrap();
            let res = (&q.h * &y + q.j.transpose() * &x + &q.b).norm();
            let bound = 1e-10 * (1.0 + x.norm() + q.b.norm());
            assert!(res <= bound, "residual {res} > {bound}");
        }
    }
}
