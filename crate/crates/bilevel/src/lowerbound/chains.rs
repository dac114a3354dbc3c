//! Chain functions and the interleaved coordinate layout.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowerbound::upsilon::{upsilon, upsilon_deriv};
use crate::oracle::SparseVec;

/// Largest 1-based index of an entry with `|x_i| > tol`; 0 when none.
pub fn prog(x: &DVector<f64>, tol: f64) -> usize {
    let mut p = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > tol {
            p = i + 1;
        }
    }
    p
}

pub fn prog_sparse(x: &SparseVec, tol: f64) -> usize {
    x.iter()
        .filter(|(_, v)| v.abs() > tol)
        .map(|(i, _)| *i as usize + 1)
        .max()
        .unwrap_or(0)
}

/// Nonconvex chain
/// `f(x) = √ν/2 (x₁−1)² + ½ Σ_{i=2}^T (x_i − x_{i−1})² + ν Σ_{i=1}^{T−1} Υ_r(x_i)`.
///
/// Returns the value and gradient. The gradient obeys the zero-chain law:
/// if `supp(x) ⊆ {1..t−1}` then `supp(∇f) ⊆ {1..t}`.
pub fn nc_chain(x: &DVector<f64>, nu: f64, r: f64) -> (f64, DVector<f64>) {
    let t = x.len();
    assert!(t >= 2, "chain needs dim >= 2");
    let mut value = 0.5 * nu.sqrt() * (x[0] - 1.0) * (x[0] - 1.0);
    let mut grad = DVector::zeros(t);
    grad[0] = nu.sqrt() * (x[0] - 1.0);
    for i in 1..t {
        let d = x[i] - x[i - 1];
        value += 0.5 * d * d;
        grad[i] += d;
        grad[i - 1] -= d;
    }
    for i in 0..t - 1 {
        value += nu * upsilon(x[i], r);
        grad[i] += nu * upsilon_deriv(x[i], r);
    }
    (value, grad)
}

/// Convex chain `f(x) = ½ xᵀ(A_T + e₁e₁ᵀ)x − ⟨e₁, x⟩ + ½`, evaluated as
/// `½(x₁−1)² + ½ Σ_{i=2}^T (x_i − x_{i−1})²`.
pub fn convex_chain(x: &DVector<f64>) -> (f64, DVector<f64>) {
    let t = x.len();
    assert!(t >= 1);
    let mut value = 0.5 * (x[0] - 1.0) * (x[0] - 1.0);
    let mut grad = DVector::zeros(t);
    grad[0] = x[0] - 1.0;
    for i in 1..t {
        let d = x[i] - x[i - 1];
        value += 0.5 * d * d;
        grad[i] += d;
        grad[i - 1] -= d;
    }
    (value, grad)
}

/// Interleaved coordinate layout of the bilevel chain instance.
///
/// The combined ordering is `x₁, y⁽¹⁾₁..y⁽¹⁾_K, x₂, y⁽²⁾₁.., …, x_T`, with
/// `z_i` sharing the slot of `x_i`. Combined dimension `n = T(K+1) − K`; a
/// zero-respecting run started at 0 must make `n' = (T−1)(K+1) − K` oracle
/// calls before the last two `x` slots can activate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLayout {
    /// Chain length `T ≥ 2`.
    pub t: usize,
    /// Sub-chain length `K`.
    pub k: usize,
}

impl ChainLayout {
    pub fn new(t: usize, k: usize) -> Result<Self> {
        if t < 2 {
            return Err(Error::regime(format!("chain length T = {t} < 2")));
        }
        if k < 1 {
            return Err(Error::regime("sub-chain length K must be positive"));
        }
        Ok(ChainLayout { t, k })
    }

    /// Combined dimension `T(K+1) − K`.
    pub fn combined_dim(&self) -> usize {
        self.t * (self.k + 1) - self.k
    }

    /// Threshold `n' = (T−1)(K+1) − K` before which `x_{T−1}, x_T` stay zero
    /// on any zero-respecting trajectory.
    pub fn n_prime(&self) -> usize {
        (self.t - 1) * (self.k + 1) - self.k
    }

    pub fn dim_x(&self) -> usize {
        self.t
    }

    pub fn dim_y_chain(&self) -> usize {
        self.k * (self.t - 1)
    }

    /// Lower-level dimension: `z` block plus `y` block.
    pub fn dim_lower(&self) -> usize {
        self.t + self.dim_y_chain()
    }

    /// 1-based combined slot of `x_i` (and `z_i`), `i` 1-based.
    pub fn x_slot(&self, i: usize) -> usize {
        debug_assert!((1..=self.t).contains(&i));
        (i - 1) * (self.k + 1) + 1
    }

    /// 1-based combined slot of `y⁽ⁱ⁾_j`, `i ∈ 1..T−1`, `j ∈ 1..K`, 1-based.
    pub fn y_slot(&self, i: usize, j: usize) -> usize {
        debug_assert!((1..self.t).contains(&i));
        debug_assert!((1..=self.k).contains(&j));
        (i - 1) * (self.k + 1) + 1 + j
    }

    /// Combined progress of a point given its `x` block and lower block
    /// `(z, y)` in chain coordinates: the largest combined slot whose
    /// coordinate is active.
    pub fn combined_progress(
        &self,
        x: &DVector<f64>,
        lower: Option<&DVector<f64>>,
        tol: f64,
    ) -> usize {
        let mut p = 0;
        for i in 1..=self.t {
            if x[i - 1].abs() > tol {
                p = p.max(self.x_slot(i));
            }
        }
        if let Some(v) = lower {
            for i in 1..=self.t {
                if v[i - 1].abs() > tol {
                    p = p.max(self.x_slot(i));
                }
            }
            for i in 1..self.t {
                for j in 1..=self.k {
                    let idx = self.t + (i - 1) * self.k + (j - 1);
                    if v[idx].abs() > tol {
                        p = p.max(self.y_slot(i, j));
                    }
                }
            }
        }
        p
    }

    /// Combined progress from sparse block views (as stored in a trace):
    /// `x` indexes the upper block, `z`/`y` index within the lower block.
    pub fn combined_progress_sparse(&self, x: &SparseVec, lower: &SparseVec, tol: f64) -> usize {
        let mut p = 0;
        for (i, v) in x {
            if v.abs() > tol {
                p = p.max(self.x_slot(*i as usize + 1));
            }
        }
        for (idx, v) in lower {
            if v.abs() <= tol {
                continue;
            }
            let idx = *idx as usize;
            if idx < self.t {
                p = p.max(self.x_slot(idx + 1));
            } else {
                let rel = idx - self.t;
                let i = rel / self.k + 1;
                let j = rel % self.k + 1;
                p = p.max(self.y_slot(i, j));
            }
        }
        p
    }

    /// Progress restricted to the `x` block, in chain index units (1-based).
    pub fn x_progress(&self, x: &DVector<f64>, tol: f64) -> usize {
        prog(x, tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prog_basics() {
        assert_eq!(prog(&DVector::zeros(5), 0.0), 0);
        let mut e3 = DVector::zeros(5);
        e3[2] = 1.0;
        assert_eq!(prog(&e3, 0.0), 3);
        assert_eq!(prog(&e3, 2.0), 0);
    }

    #[test]
    fn nc_chain_minimum_at_ones() {
        let (v, g) = nc_chain(&DVector::from_element(12, 1.0), 0.7, 2.0);
        assert_eq!(v, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn nc_chain_gradient_floor() {
        // x with x_{T−1} = x_T = 0 has gradient norm > ν^{3/4}/4.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (nu, r) in [(1.0, 1.0), (0.25, 1.0), (0.04, 5.0)] {
            for _ in 0..100 {
                let t = 9;
                let mut x = DVector::from_fn(t, |_, _| 4.0 * rng.gen::<f64>() - 2.0);
                x[t - 2] = 0.0;
                x[t - 1] = 0.0;
                let (_, g) = nc_chain(&x, nu, r);
                let floor = nu.powf(0.75) / 4.0;
                assert!(g.norm() > floor, "‖∇f‖ = {} ≤ {floor}", g.norm());
            }
        }
    }

    #[test]
    fn nc_chain_zero_chain_law() {
        // supp(x) ⊆ {1..t−1} ⟹ supp(grad) ⊆ {1..t}
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = 11;
        for cut in 1..t {
            let mut x = DVector::zeros(t);
            for i in 0..cut - 1 {
                x[i] = rng.gen::<f64>() - 0.5;
            }
            let (_, g) = nc_chain(&x, 0.5, 1.0);
            assert!(prog(&g, 0.0) <= cut, "cut={cut}, prog={}", prog(&g, 0.0));
        }
    }

    #[test]
    fn gd_trajectory_advances_prog_by_at_most_one() {
        let t = 10;
        let mut x = DVector::zeros(t);
        let mut last = 0;
        for _ in 0..60 {
            let (_, g) = nc_chain(&x, 1.0, 1.0);
            x -= 0.05 * g;
            let p = prog(&x, 0.0);
            assert!(p <= last + 1, "prog jumped from {last} to {p}");
            last = last.max(p);
        }
        assert!(last >= 3, "trajectory should make progress");
    }

    #[test]
    fn convex_chain_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in [8usize, 32] {
            for _ in 0..100 {
                let mut x = DVector::from_fn(t, |_, _| 2.0 * rng.gen::<f64>() - 1.0);
                x[t - 1] = 0.0;
                let (_, g) = convex_chain(&x);
                let floor = 1.0 / (t as f64).powf(1.5);
                assert!(g.norm() > floor);
            }
        }
    }

    #[test]
    fn layout_slots_interleave() {
        let l = ChainLayout::new(4, 3).unwrap();
        assert_eq!(l.combined_dim(), 13);
        assert_eq!(l.n_prime(), 9);
        assert_eq!(l.x_slot(1), 1);
        assert_eq!(l.y_slot(1, 1), 2);
        assert_eq!(l.y_slot(1, 3), 4);
        assert_eq!(l.x_slot(2), 5);
        assert_eq!(l.x_slot(4), 13);
        // x_{T−1} sits exactly at slot n'
        assert_eq!(l.x_slot(3), l.n_prime());
    }
}
