use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{DataError, Dataset, Sample, TrueCurves};
use crate::tensor::{sigmoid, softplus, DenseMatrix};

/// Exponent of the power-law cost curve `g(k) = c · k^γ`.
pub const COST_EXPONENT: f64 = 1.2;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

/// One user's latent response: saturating revenue and power-law cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseCurve {
    pub base: f64,
    /// Revenue gain at saturation, `a ≥ 0`.
    pub sensitivity: f64,
    /// Saturation rate, `b > 0`.
    pub saturation: f64,
    /// Cost slope, `c ≥ 0`.
    pub cost_slope: f64,
}

impl ResponseCurve {
    /// `f(k) = base + a · (1 − e^{−b k})`.
    pub fn revenue(&self, k: usize) -> f64 {
        self.base + self.sensitivity * (1.0 - (-self.saturation * k as f64).exp())
    }

    /// `g(k) = c · k^γ`.
    pub fn cost(&self, k: usize) -> f64 {
        self.cost_slope * (k as f64).powf(COST_EXPONENT)
    }
}

fn projection(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z / (d as f64).sqrt()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Randomized trial with known monotone curves.
///
/// Features are standard normal. Each user's curve parameters come from
/// fixed random projections of the features, treatment is uniform over
/// `0..=K`, and observed responses are the true curve at the assigned level
/// plus Gaussian noise. Observed cost is floored at zero.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset, DataError> {
    let SyntheticConfig {
        n,
        d,
        k,
        noise_scale,
        seed,
    } = *config;
    if n == 0 {
        return Err(DataError::InvalidArgument("n must be positive".into()));
    }
    if k == 0 {
        return Err(DataError::InvalidArgument("K must be at least 1".into()));
    }
    if d == 0 {
        return Err(DataError::InvalidArgument("d must be positive".into()));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(DataError::InvalidArgument(format!("noise scale {noise_scale} must be ≥ 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_base = projection(&mut rng, d, 1.0);
    let w_sens = projection(&mut rng, d, 1.5);
    let w_sat = projection(&mut rng, d, 1.5);
    let w_cost = projection(&mut rng, d, 1.5);
    let noise = Normal::new(0.0, noise_scale.max(f64::MIN_POSITIVE)).expect("valid normal");

    let levels = k + 1;
    let mut samples = Vec::with_capacity(n);
    let mut rev = DenseMatrix::zeros(n, levels);
    let mut cost = DenseMatrix::zeros(n, levels);
    for i in 0..n {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let curve = ResponseCurve {
            base: 1.0 + dot(&w_base, &x),
            sensitivity: 2.0 * softplus(dot(&w_sens, &x) - 0.5),
            saturation: 0.2 + sigmoid(dot(&w_sat, &x)),
            cost_slope: 0.1 + softplus(dot(&w_cost, &x) - 0.5),
        };
        for lvl in 0..levels {
            rev.set(i, lvl, curve.revenue(lvl));
            cost.set(i, lvl, curve.cost(lvl));
        }
        let t = rng.random_range(0..levels);
        let (eps_r, eps_c) = if noise_scale > 0.0 {
            (noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        samples.push(Sample {
            features: x,
            treatment: t,
            cost: (curve.cost(t) + eps_c).max(0.0),
            revenue: curve.revenue(t) + eps_r,
        });
    }
    Dataset::new(samples, k, d)?.with_ground_truth(TrueCurves { revenue: rev, cost })
}
