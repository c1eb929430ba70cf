use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DenseMatrix;

/// Persisted power-iteration state for one weight matrix.
///
/// `right` is the current estimate of the leading right singular vector
/// (length = number of columns). `left = W·right / sigma` is recomputed on
/// every call.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerIteration {
    pub right: Vec<f64>,
}

/// Result of a spectral-norm estimate with the singular-vector pair used.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn mat_vec(w: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(w: &DenseMatrix, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (r, &ur) in u.iter().enumerate() {
        for (o, &a) in out.iter_mut().zip(w.row(r)) {
            *o += a * ur;
        }
    }
    out
}

impl PowerIteration {
    /// Random unit start vector for a matrix with `cols` columns.
    pub fn seeded(cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut right: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        if normalize(&mut right) == 0.0 {
            right = vec![0.0; cols];
            if cols > 0 {
                right[0] = 1.0;
            }
        }
        Self { right }
    }

    /// Runs `iterations` steps of power iteration on `WᵀW` from the stored
    /// vector, updates it, and returns the estimate `‖W v‖`.
    ///
    /// The estimate is nondecreasing in the iteration count and never exceeds
    /// the Frobenius norm. A zero matrix yields `sigma = 0` and zero vectors.
    pub fn step(&mut self, w: &DenseMatrix, iterations: usize) -> SpectralEstimate {
        assert_eq!(self.right.len(), w.cols(), "power-iteration vector length");
        let mut v = self.right.clone();
        for _ in 0..iterations {
            let mut next = mat_t_vec(w, &mat_vec(w, &v));
            if normalize(&mut next) == 0.0 {
                return SpectralEstimate {
                    sigma: 0.0,
                    left: vec![0.0; w.rows()],
                    right: vec![0.0; w.cols()],
                };
            }
            v = next;
        }
        let mut u = mat_vec(w, &v);
        let sigma = normalize(&mut u);
        self.right.clone_from(&v);
        if sigma == 0.0 {
            return SpectralEstimate {
                sigma: 0.0,
                left: vec![0.0; w.rows()],
                right: vec![0.0; w.cols()],
            };
        }
        SpectralEstimate {
            sigma,
            left: u,
            right: v,
        }
    }
}

/// Power-iteration estimate of the largest singular value of `w`.
///
/// `iterations` is clamped to at least one.
pub fn spectral_norm(w: &DenseMatrix, iterations: usize, seed: u64) -> f64 {
    if w.data().iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    PowerIteration::seeded(w.cols(), seed)
        .step(w, iterations.max(1))
        .sigma
}
