//! Sampled Lipschitz estimation for gradient maps. The estimate is a lower
//! bound on the true constant, so "estimate ≤ certified bound" is a sound
//! check while "estimate close to bound" indicates tightness.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::gaussian_vector;

/// Where the sampler draws its pairs.
pub struct LipschitzSampler {
    pub dim: usize,
    /// Ball radius around the origin.
    pub radius: f64,
    /// Extra anchor points (e.g. iterates a solver visited).
    pub trajectory: Vec<DVector<f64>>,
    pub seed: u64,
}

impl LipschitzSampler {
    pub fn ball(dim: usize, radius: f64, seed: u64) -> Self {
        LipschitzSampler {
            dim,
            radius,
            trajectory: Vec::new(),
            seed,
        }
    }

    pub fn with_trajectory(mut self, points: Vec<DVector<f64>>) -> Self {
        self.trajectory = points;
        self
    }
}

/// `max ‖∇(u) − ∇(v)‖ / ‖u − v‖` over `n_pairs` sampled pairs: random pairs
/// in the ball, pairs anchored at trajectory points, and short-range pairs
/// probing local curvature.
pub fn lipschitz_estimate(
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    sampler: &LipschitzSampler,
    n_pairs: usize,
) -> f64 {
    assert!(n_pairs >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut best = 0.0f64;
    let mut consider = |u: &DVector<f64>, v: &DVector<f64>| {
        let d = (u - v).norm();
        if d > 1e-12 {
            let r = (grad(u) - grad(v)).norm() / d;
            if r > best {
                best = r;
            }
        }
    };
    let draw = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        let g = gaussian_vector(sampler.dim, rng);
        let norm = g.norm().max(1e-300);
        let rad: f64 = rng.gen::<f64>().powf(1.0 / sampler.dim as f64) * sampler.radius;
        g * (rad / norm)
    };
    for i in 0..n_pairs {
        let u = draw(&mut rng);
        let v = if i % 3 == 0 {
            // short-range probe
            let dir = gaussian_vector(sampler.dim, &mut rng);
            &u + dir * (1e-4 * sampler.radius / (sampler.dim as f64).sqrt())
        } else {
            draw(&mut rng)
        };
        consider(&u, &v);
        if !sampler.trajectory.is_empty() {
            let anchor = &sampler.trajectory[i % sampler.trajectory.len()];
            consider(anchor, &u);
        }
    }
    for w in sampler.trajectory.windows(2) {
        consider(&w[0], &w[1]);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use nalgebra::DMatrix;

    #[test]
    fn linear_map_estimate_bounded_by_operator_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = DMatrix::from_fn(6, 6, |_, _| linalg::standard_normal(&mut rng));
        let op = linalg::op_norm(&m);
        let grad = |x: &DVector<f64>| &m * x;
        let sampler = LipschitzSampler::ball(6, 10.0, 1);
        let est = lipschitz_estimate(grad, &sampler, 500);
        assert!(est <= op * (1.0 + 1e-9), "estimate {est} above ‖M‖ {op}");
        assert!(est >= 0.5 * op, "estimate {est} far below ‖M‖ {op}");
    }
}
