use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.15,
            test: 0.15,
            seed: 0,
        }
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded disjoint train/validation/test partition.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let fractions = [spec.train, spec.validation, spec.test];
    if fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(DataError::InvalidArgument("split fractions must be positive".into()));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidArgument("split fractions must sum to 1".into()));
    }
    let n = dataset.len();
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_valid = (n as f64 * spec.validation).round() as usize;
    if n_train == 0 || n_valid == 0 || n_train + n_valid >= n {
        return Err(DataError::InvalidArgument(format!(
            "split of {n} samples would leave a part empty"
        )));
    }
    let idx = shuffled(n, spec.seed);
    let (train, rest) = idx.split_at(n_train);
    let (valid, test) = rest.split_at(n_valid);
    Ok((dataset.subset(train), dataset.subset(valid), dataset.subset(test)))
}

/// Index batches for one pass over `n` samples in seeded order; the final
/// batch may be short.
pub fn minibatches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    shuffled(n, seed).chunks(batch_size).map(<[usize]>::to_vec).collect()
}
