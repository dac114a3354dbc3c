//! The scalar nonconvex regularizer used by the chain constructions:
//!
//! `Υ_r(x) = 120 ∫₁ˣ t²(t−1)/(1 + (t/r)²) dt`.
//!
//! The value is evaluated through the partial-fraction antiderivative
//! (quadratic polynomial, arctan and log terms); tests re-validate it
//! against adaptive quadrature.

use serde::{Deserialize, Serialize};

/// Parameters `(r, ν)` of the regularizer and its weight in a chain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UpsilonParams {
    /// Flatness radius, `r ≥ 1`.
    pub r: f64,
    /// Weight, `ν ∈ (0, 1]`.
    pub nu: f64,
}

fn antiderivative(t: f64, r: f64) -> f64 {
    let r2 = r * r;
    r2 * (0.5 * t * t - t - 0.5 * r2 * (r2 + t * t).ln() + r * (t / r).atan())
}

/// `Υ_r(x)` via the closed-form antiderivative.
pub fn upsilon(x: f64, r: f64) -> f64 {
    120.0 * (antiderivative(x, r) - antiderivative(1.0, r))
}

/// `Υ'_r(x) = 120 x²(x−1)/(1+(x/r)²)`.
pub fn upsilon_deriv(x: f64, r: f64) -> f64 {
    120.0 * x * x * (x - 1.0) / (1.0 + (x / r) * (x / r))
}

/// `Υ''_r(x)` in closed form.
pub fn upsilon_d2(x: f64, r: f64) -> f64 {
    let r2 = r * r;
    let u = 120.0 * (x.powi(3) - x * x);
    let up = 120.0 * (3.0 * x * x - 2.0 * x);
    let v = 1.0 + x * x / r2;
    let vp = 2.0 * x / r2;
    (up * v - u * vp) / (v * v)
}

/// `Υ'''_r(x)` in closed form.
pub fn upsilon_d3(x: f64, r: f64) -> f64 {
    let r2 = r * r;
    let u = 120.0 * (x.powi(3) - x * x);
    let up = 120.0 * (3.0 * x * x - 2.0 * x);
    let upp = 120.0 * (6.0 * x - 2.0);
    let v = 1.0 + x * x / r2;
    let vp = 2.0 * x / r2;
    let vpp = 2.0 / r2;
    (upp * v - u * vpp) / (v * v) - 2.0 * vp * (up * v - u * vp) / (v * v * v)
}

fn sup_on_grid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let mut best = 0.0f64;
    let mut best_x = lo;
    for i in 0..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let v = f(x).abs();
        if v > best {
            best = v;
            best_x = x;
        }
    }
    // local refinement around the grid argmax
    let h0 = (hi - lo) / n as f64;
    let mut h = h0;
    let mut x = best_x;
    for _ in 0..40 {
        for cand in [x - h, x + h] {
            let v = f(cand).abs();
            if v > best {
                best = v;
                x = cand;
            }
        }
        h *= 0.5;
    }
    best
}

/// Lipschitz constant of `Υ'_r`: `sup_x |Υ''_r(x)|`, found numerically from
/// the closed-form second derivative (the tail limit is `120 r²`).
pub fn grad_lipschitz(r: f64) -> f64 {
    let span = 6.0 * r + 6.0;
    sup_on_grid(|x| upsilon_d2(x, r), -span, span, 200_000).max(120.0 * r * r)
}

/// Lipschitz constant of `Υ''_r`: `sup_x |Υ'''_r(x)|`.
pub fn hess_lipschitz(r: f64) -> f64 {
    let span = 6.0 * r + 6.0;
    sup_on_grid(|x| upsilon_d3(x, r), -span, span, 200_000)
}

/// `sup_x |Υ^{(q+1)}_r(x)|` for `q ≥ 3`, from central differences of the
/// closed-form third derivative. Supported up to `q = 6`.
pub fn deriv_sup(q: usize, r: f64) -> f64 {
    match q {
        1 => grad_lipschitz(r),
        2 => hess_lipschitz(r),
        3..=6 => {
            let order = q - 2; // how many finite differences on top of d3
            let h = 1e-2 * r;
            let fd = move |x: f64| fd_of_d3(x, r, order, h);
            let span = 6.0 * r + 6.0;
            sup_on_grid(fd, -span, span, 50_000)
        }
        _ => panic!("derivative order {q} not supported (max 6)"),
    }
}

fn fd_of_d3(x: f64, r: f64, order: usize, h: f64) -> f64 {
    if order == 0 {
        return upsilon_d3(x, r);
    }
    (fd_of_d3(x + h, r, order - 1, h) - fd_of_d3(x - h, r, order - 1, h)) / (2.0 * h)
}
