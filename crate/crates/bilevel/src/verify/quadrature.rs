//! Adaptive Simpson quadrature, used as an independent oracle for
//! closed-form antiderivatives.

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(f, a, m, fa, flm, fm);
    let right = simpson(f, m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adapt(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + adapt(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// `∫_a^b f`, to absolute tolerance `tol`. Handles `a > b` by sign flip.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let m = 0.5 * (lo + hi);
    let fa = f(lo);
    let fm = f(m);
    let fb = f(hi);
    let whole = simpson(&f, lo, hi, fa, fm, fb);
    sign * adapt(&f, lo, hi, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|t| t * t, 0.0, 3.0, 1e-12);
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn orientation() {
        let v = integrate(|t| t, 2.0, 0.0, 1e-12);
        assert!((v + 2.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_transcendental() {
        let v = integrate(|t| (-t * t / 2.0).exp(), -8.0, 8.0, 1e-12);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }
}
