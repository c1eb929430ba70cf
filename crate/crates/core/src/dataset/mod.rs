//! Randomized-trial samples, loaders, the synthetic generator, and splits.

mod csv_io;
mod split;
mod synthetic;

pub use csv_io::{
    load_csv, load_truth_csv, read_csv, write_csv, write_truth_csv, CsvSchema, HillstromSubset,
};
pub use split::{minibatches, split, SplitSpec};
pub use synthetic::{generate_synthetic, ResponseCurve, SyntheticConfig, COST_EXPONENT};

use crate::tensor::DenseMatrix;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` has non-numeric value `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: unknown treatment label `{label}`")]
    UnknownTreatment { row: usize, label: String },
    #[error("row {row}: unknown category `{value}` in column `{column}`")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("no samples")]
    NoSamples,
    #[error("treatment level {0} has no samples")]
    MissingTreatmentLevel(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// How a response channel is modelled and scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ResponseKind {
    /// Real-valued response, squared-error loss.
    #[default]
    Continuous,
    /// 0/1 response, cross-entropy loss on a logit.
    Binary,
}

impl std::str::FromStr for ResponseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" | "continuous" => Ok(Self::Continuous),
            "bce" | "binary" => Ok(Self::Binary),
            other => Err(format!("unknown response kind `{other}` (expected mse or bce)")),
        }
    }
}

impl std::fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Continuous => "mse",
            Self::Binary => "bce",
        })
    }
}

/// One randomized-trial record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Assigned treatment, `0` is control.
    pub treatment: usize,
    pub cost: f64,
    pub revenue: f64,
}

/// Ground-truth response and cost curves, one row per sample and one column
/// per treatment level `0..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueCurves {
    pub revenue: DenseMatrix,
    pub cost: DenseMatrix,
}

impl TrueCurves {
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            revenue: self.revenue.select_rows(indices),
            cost: self.cost.select_rows(indices),
        }
    }

    /// True uplifts `f(k) - f(0)` and `g(k) - g(0)`.
    pub fn uplifts(&self) -> (DenseMatrix, DenseMatrix) {
        let diff = |m: &DenseMatrix| {
            let mut out = m.clone();
            for r in 0..out.rows() {
                let base = m.get(r, 0);
                out.row_mut(r).iter_mut().for_each(|v| *v -= base);
            }
            out
        };
        (diff(&self.revenue), diff(&self.cost))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Number of non-control treatments `K`; levels are `0..=K`.
    pub num_treatments: usize,
    pub feature_dim: usize,
    pub ground_truth: Option<TrueCurves>,
    pub cost_kind: ResponseKind,
    pub revenue_kind: ResponseKind,
    pub feature_names: Vec<String>,
    /// Features that get standardized; one-hot indicators are left alone.
    pub numeric_features: Vec<bool>,
}

impl Dataset {
    /// Validates shapes and values. Coverage of every treatment level is not
    /// required here; loaders check it on their own inputs.
    pub fn new(
        samples: Vec<Sample>,
        num_treatments: usize,
        feature_dim: usize,
    ) -> Result<Self, DataError> {
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(DataError::InvalidRow {
                    row: i,
                    message: format!(
                        "feature length {} does not match dimension {feature_dim}",
                        s.features.len()
                    ),
                });
            }
            if s.treatment > num_treatments {
                return Err(DataError::InvalidRow {
                    row: i,
                    message: format!("treatment {} exceeds K = {num_treatments}", s.treatment),
                });
            }
            if !s.cost.is_finite() || !s.revenue.is_finite() || s.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::InvalidRow {
                    row: i,
                    message: "non-finite value".into(),
                });
            }
            if s.cost < 0.0 {
                return Err(DataError::InvalidRow {
                    row: i,
                    message: format!("negative cost {}", s.cost),
                });
            }
        }
        Ok(Self {
            samples,
            num_treatments,
            feature_dim,
            ground_truth: None,
            cost_kind: ResponseKind::Continuous,
            revenue_kind: ResponseKind::Continuous,
            feature_names: (0..feature_dim).map(|i| format!("f{i}")).collect(),
            numeric_features: vec![true; feature_dim],
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of treatment levels including control, `K + 1`.
    pub fn num_levels(&self) -> usize {
        self.num_treatments + 1
    }

    pub fn with_ground_truth(mut self, truth: TrueCurves) -> Result<Self, DataError> {
        if truth.revenue.rows() != self.len()
            || truth.cost.rows() != self.len()
            || truth.revenue.cols() != self.num_levels()
            || truth.cost.cols() != self.num_levels()
        {
            return Err(DataError::InvalidArgument(format!(
                "truth curves {}/{} do not match {} samples with {} levels",
                truth.revenue.shape(),
                truth.cost.shape(),
                self.len(),
                self.num_levels()
            )));
        }
        self.ground_truth = Some(truth);
        Ok(self)
    }

    /// Rows `indices` in order, keeping metadata and ground truth.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            num_treatments: self.num_treatments,
            feature_dim: self.feature_dim,
            ground_truth: self.ground_truth.as_ref().map(|t| t.select(indices)),
            cost_kind: self.cost_kind,
            revenue_kind: self.revenue_kind,
            feature_names: self.feature_names.clone(),
            numeric_features: self.numeric_features.clone(),
        }
    }

    pub fn features(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.len(), self.feature_dim);
        for (r, s) in self.samples.iter().enumerate() {
            m.row_mut(r).copy_from_slice(&s.features);
        }
        m
    }

    pub fn treatments(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.treatment).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.cost).collect()
    }

    pub fn revenues(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.revenue).collect()
    }

    /// Sample count per treatment level.
    pub fn treatment_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_levels()];
        for s in &self.samples {
            counts[s.treatment] += 1;
        }
        counts
    }

    /// Observed mean `(cost, revenue)` per treatment level; empty levels give 0.
    pub fn group_means(&self) -> Vec<(f64, f64)> {
        let mut sums = vec![(0.0, 0.0, 0usize); self.num_levels()];
        for s in &self.samples {
            let e = &mut sums[s.treatment];
            e.0 += s.cost;
            e.1 += s.revenue;
            e.2 += 1;
        }
        sums.into_iter()
            .map(|(c, r, n)| if n == 0 { (0.0, 0.0) } else { (c / n as f64, r / n as f64) })
            .collect()
    }
}

/// Per-feature affine standardization fit on a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and standard deviation of the numeric features of `data`;
    /// constant or non-numeric columns keep `(0, 1)`.
    pub fn fit(data: &Dataset) -> Self {
        let d = data.feature_dim;
        let mut out = Self::identity(d);
        if data.is_empty() {
            return out;
        }
        let n = data.len() as f64;
        for j in 0..d {
            if !data.numeric_features[j] {
                continue;
            }
            let mean = data.samples.iter().map(|s| s.features[j]).sum::<f64>() / n;
            let var = data
                .samples
                .iter()
                .map(|s| (s.features[j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            if sd > 1e-12 {
                out.mean[j] = mean;
                out.scale[j] = sd;
            }
        }
        out
    }

    pub fn apply(&self, features: &DenseMatrix) -> DenseMatrix {
        let mut out = features.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: usize, c: f64) -> Sample {
        Sample {
            features: vec![1.0, 2.0],
            treatment: t,
            cost: c,
            revenue: 1.0,
        }
    }

    #[test]
    fn rejects_out_of_range_treatment_and_negative_cost() {
        assert!(Dataset::new(vec![sample(3, 0.0)], 2, 2).is_err());
        assert!(Dataset::new(vec![sample(0, -1.0)], 2, 2).is_err());
        assert!(Dataset::new(vec![sample(1, 0.0)], 2, 3).is_err());
    }

    #[test]
    fn standardizer_skips_indicator_columns() {
        let mut ds = Dataset::new(
            vec![
                Sample { features: vec![0.0, 1.0], treatment: 0, cost: 0.0, revenue: 0.0 },
                Sample { features: vec![2.0, 0.0], treatment: 1, cost: 0.0, revenue: 0.0 },
            ],
            1,
            2,
        )
        .unwrap();
        ds.numeric_features = vec![true, false];
        let st = Standardizer::fit(&ds);
        assert_eq!(st.mean, vec![1.0, 0.0]);
        assert_eq!(st.scale, vec![1.0, 1.0]);
        let z = st.apply(&ds.features());
        assert_eq!(z.data(), &[-1.0, 1.0, 1.0, 0.0]);
    }
}
