//! Uplift ranking and allocation metrics on randomized-trial data.
//!
//! Curves are built by sorting on score, highest first, with ties kept in
//! input order. Areas use the trapezoid rule on `x` scaled to `[0, 1]` and
//! min-max scaled `y`, so an uninformative ranking lands near 0.5.

mod curves;
mod eom;
mod kendall;

pub use curves::{aucc, aucc_curve, auuc, mt_aucc, mt_aucc_curve, pair_efficiency, qini, uplift_curve, write_curve_csv, CurvePoints};
pub use eom::{eom, EomEstimate};
pub use kendall::{kendall_bins, kendall_tau_b, KendallResult};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("need both treated and control samples")]
    SingleGroup,
    #[error("sample {index} has treatment {treatment}; a binary metric needs 0/1")]
    NotBinary { index: usize, treatment: usize },
    #[error("degenerate cost curve: total incremental cost {0} is not positive")]
    DegenerateCostCurve(f64),
    #[error("policy unsupported by data: no sample received its assigned treatment")]
    UnsupportedPolicy,
    #[error("sample {index} has treatment {treatment}, outside the {levels} modeled levels")]
    TreatmentOutOfRange { index: usize, treatment: usize, levels: usize },
    #[error("{n} samples cannot fill {bins} bins")]
    TooFewSamples { n: usize, bins: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite score at sample {0}")]
    NonFinite(usize),
    #[error("fewer than two usable bins")]
    TooFewBins,
}

/// Observed trial record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub treatment: usize,
    pub cost: f64,
    pub revenue: f64,
}

/// A trial record with a ranking score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub treatment: usize,
    pub cost: f64,
    pub revenue: f64,
}

impl ScoredSample {
    pub fn observation(&self) -> Observation {
        Observation {
            treatment: self.treatment,
            cost: self.cost,
            revenue: self.revenue,
        }
    }
}

/// Pairs scores with observations.
pub fn score(scores: &[f64], obs: &[Observation]) -> Result<Vec<ScoredSample>, MetricError> {
    if scores.len() != obs.len() {
        return Err(MetricError::LengthMismatch(format!("{} scores for {} samples", scores.len(), obs.len())));
    }
    Ok(scores
        .iter()
        .zip(obs)
        .map(|(&score, o)| ScoredSample {
            score,
            treatment: o.treatment,
            cost: o.cost,
            revenue: o.revenue,
        })
        .collect())
}

fn check_binary(scored: &[ScoredSample]) -> Result<(), MetricError> {
    let mut seen = [false; 2];
    for (i, s) in scored.iter().enumerate() {
        if !s.score.is_finite() {
            return Err(MetricError::NonFinite(i));
        }
        if s.treatment > 1 {
            return Err(MetricError::NotBinary {
                index: i,
                treatment: s.treatment,
            });
        }
        seen[s.treatment] = true;
    }
    if seen == [true, true] {
        Ok(())
    } else {
        Err(MetricError::SingleGroup)
    }
}

/// Indices by descending score; ties keep input order.
fn ranking(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let s: Vec<f64> = scores.collect();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    idx
}
