//! Joint training of the uplift network through the allocation layer, the
//! two-stage baseline, and held-out evaluation.

mod adam;
mod config;
mod evaluate;

use std::io::Write;

pub use adam::Adam;
pub use config::{ConfigError, TrainMode};
pub use evaluate::{
    evaluate, random_policy, sweep_curve, write_budget_csv, BudgetRow, EvaluationReport, OracleModel, UpliftSource,
};

use crate::dataset::{minibatches, DataError, Dataset, Standardizer};
use crate::diff_ilp::{backward_with, BackwardOptions, DiffIlpError, NeighborScheme, RevenueSign};
use crate::knapsack::{solve_mckp, AllocationProblem, KnapsackError};
use crate::metrics::{qini, MetricError, ScoredSample};
use crate::model::{init_model, Batch, ModelConfig, ModelError, ModelGraph, ModelParams, POWER_ITERATIONS};
use crate::tensor::{DenseMatrix, TensorError};

/// Lower clamp on allocation probabilities inside the cross-entropy.
pub const ALLOCATION_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Knapsack(#[from] KnapsackError),
    #[error(transparent)]
    DiffIlp(#[from] DiffIlpError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training setup: {0}")]
    InvalidConfig(String),
    #[error("allocation row {0} is not one-hot")]
    NotOneHot(usize),
    #[error("loss diverged at epoch {epoch}, batch {batch}: prediction {prediction}, lipschitz {lipschitz}, allocation {allocation}")]
    Divergence {
        epoch: usize,
        batch: usize,
        prediction: f64,
        lipschitz: f64,
        allocation: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the Lipschitz term.
    pub alpha: f64,
    /// Weight of the allocation loss.
    pub beta: f64,
    /// Budget over the whole training set; each batch gets its share.
    pub budget: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epoch cap.
    pub max_iterations: usize,
    pub patience: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub neighbor_scheme: NeighborScheme,
    pub revenue_sign: RevenueSign,
    /// Weight each sample's allocation loss by its observed revenue,
    /// floored at zero.
    pub weight_by_response: bool,
    pub hidden_dims: Vec<usize>,
    pub head_dims: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 1.0,
            budget: 400.0,
            learning_rate: 1e-3,
            batch_size: 256,
            max_iterations: 30,
            patience: 5,
            seed: 0,
            mode: TrainMode::E3ir,
            neighbor_scheme: NeighborScheme::default(),
            revenue_sign: RevenueSign::default(),
            weight_by_response: false,
            hidden_dims: vec![64, 32],
            head_dims: vec![32],
            embed_dim: 8,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            input_dim: data.feature_dim,
            num_treatments: data.num_treatments,
            hidden_dims: self.hidden_dims.clone(),
            head_dims: self.head_dims.clone(),
            embed_dim: self.embed_dim,
            revenue_kind: data.revenue_kind,
            cost_kind: data.cost_kind,
        }
    }
}

/// Sample-weighted means over one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub prediction: f64,
    pub lipschitz: f64,
    pub allocation: f64,
    /// `prediction + alpha * lipschitz + beta * allocation`.
    pub total: f64,
    pub validation_qini: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,prediction,lipschitz,allocation,total,validation_qini")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.epoch, e.prediction, e.lipschitz, e.allocation, e.total, e.validation_qini
            )?;
        }
        Ok(())
    }
}

/// Clamped cross-entropy between a hard allocation and the observed
/// treatments, with its gradient in `z`.
///
/// Row `i` of the gradient is `-w_i / (N max(z[i, t_i], eps))` at the
/// observed column and zero elsewhere; `w_i = 1` unless `weights` is given.
pub fn allocation_loss(
    z: &DenseMatrix,
    treatments: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, DenseMatrix), TrainError> {
    if z.rows() != treatments.len() || weights.is_some_and(|w| w.len() != treatments.len()) {
        return Err(TrainError::InvalidConfig(format!(
            "allocation has {} rows for {} samples",
            z.rows(),
            treatments.len()
        )));
    }
    let n = z.rows() as f64;
    let mut dz = DenseMatrix::zeros(z.rows(), z.cols());
    let mut value = 0.0;
    for (i, &t) in treatments.iter().enumerate() {
        let row = z.row(i);
        if row.iter().any(|&v| v != 0.0 && v != 1.0) || row.iter().sum::<f64>() != 1.0 || t >= z.cols() {
            return Err(TrainError::NotOneHot(i));
        }
        let w = weights.map_or(1.0, |w| w[i]);
        let p = row[t].clamp(ALLOCATION_EPS, 1.0);
        value -= w * p.ln();
        dz.set(i, t, -w / (n * p));
    }
    Ok((value / n, dz))
}

/// Mean over levels `k` of the Qini coefficient on control and level-`k`
/// samples, scored by predicted revenue uplift at `k`.
pub fn validation_qini(model: &ModelParams, data: &Dataset) -> Result<f64, TrainError> {
    let u = model.uplift(&data.features())?;
    let k = data.num_treatments;
    let mut total = 0.0;
    for level in 1..=k {
        let scored: Vec<ScoredSample> = data
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.treatment == 0 || s.treatment == level)
            .map(|(i, s)| ScoredSample {
                score: u.tau_revenue.get(i, level),
                treatment: usize::from(s.treatment == level),
                cost: s.cost,
                revenue: s.revenue,
            })
            .collect();
        total += qini(&scored)?;
    }
    Ok(total / k as f64)
}

fn response_weights(batch: &Batch) -> Vec<f64> {
    batch.revenues.iter().map(|&r| r.max(0.0)).collect()
}

/// Per-epoch shuffle seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

struct StepLosses {
    prediction: f64,
    lipschitz: f64,
    allocation: f64,
}

fn train_step(
    model: &mut ModelParams,
    opt: &mut Adam,
    batch: &Batch,
    batch_budget: f64,
    config: &TrainConfig,
) -> Result<StepLosses, TrainError> {
    let spectral = model.refresh_spectral(POWER_ITERATIONS);
    let mut g = ModelGraph::build(model, batch.len(), Some(&spectral))?;
    let losses = g.attach_losses(batch, config.alpha)?;
    g.run(&batch.features)?;
    let prediction = g.graph.value(losses.prediction)?.item();
    let lipschitz = match losses.lipschitz {
        Some(l) => g.graph.value(l)?.item(),
        None => 0.0,
    };
    let mut seeds = vec![(losses.total, DenseMatrix::scalar(1.0))];
    let mut allocation = 0.0;
    if config.mode == TrainMode::E3ir {
        let u = g.uplift_matrices()?;
        let problem = AllocationProblem::new(u.tau_revenue.clone(), u.tau_cost.clone(), batch_budget)?;
        let solution = solve_mckp(&problem);
        let z = solution.z(problem.num_options());
        let weights = config.weight_by_response.then(|| response_weights(batch));
        let (value, dz) = allocation_loss(&z, &batch.treatments, weights.as_deref())?;
        allocation = value;
        if config.beta > 0.0 {
            let options = BackwardOptions {
                scheme: config.neighbor_scheme,
                revenue_sign: config.revenue_sign,
            };
            let packet = backward_with(&dz, &z, &u.tau_cost, &u.tau_revenue, batch_budget, options)?;
            seeds.push((g.tau_revenue, packet.d_tau_revenue.scaled(config.beta)));
            seeds.push((g.tau_cost, packet.d_tau_cost.scaled(config.beta)));
        }
    }
    let grads = g.graph.backward_seeded(&seeds)?;
    let param_grads = g.parameter_gradients(&grads);
    opt.update(model.tensors_mut(), &param_grads);
    Ok(StepLosses {
        prediction,
        lipschitz,
        allocation,
    })
}

/// Trains with early stopping on validation Qini and returns the best
/// epoch's parameters. `TrainMode::TwoStage` drops the allocation loss.
pub fn train(train: &Dataset, valid: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainReport), TrainError> {
    config
        .validate()
        .map_err(|(k, m)| TrainError::InvalidConfig(format!("{k}: {m}")))?;
    if train.is_empty() || valid.is_empty() {
        return Err(TrainError::InvalidConfig("empty training or validation set".into()));
    }
    if train.num_treatments != valid.num_treatments || train.feature_dim != valid.feature_dim {
        return Err(TrainError::InvalidConfig("training and validation sets disagree on shape".into()));
    }
    let mut model = init_model(config.model_config(train), config.seed)?;
    model.standardizer = Standardizer::fit(train);
    let full = Batch::from_dataset(train, &model.standardizer);
    let n_train = train.len() as f64;
    let mut opt = Adam::new(config.learning_rate);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stopped_early = false;

    for epoch in 0..config.max_iterations {
        let (mut pred, mut lip, mut alloc, mut total) = (0.0, 0.0, 0.0, 0.0);
        for (b, idx) in minibatches(train.len(), config.batch_size, epoch_seed(config.seed, epoch))
            .into_iter()
            .enumerate()
        {
            let batch = full.select(&idx);
            let share = idx.len() as f64 / n_train;
            let s = train_step(&mut model, &mut opt, &batch, config.budget * share, config)?;
            let step_total = s.prediction + config.alpha * s.lipschitz + config.beta * s.allocation;
            if !step_total.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b,
                    prediction: s.prediction,
                    lipschitz: s.lipschitz,
                    allocation: s.allocation,
                });
            }
            pred += share * s.prediction;
            lip += share * s.lipschitz;
            alloc += share * s.allocation;
            total += share * step_total;
        }
        let q = validation_qini(&model, valid)?;
        epochs.push(EpochRecord {
            epoch,
            prediction: pred,
            lipschitz: lip,
            allocation: alloc,
            total,
            validation_qini: q,
        });
        if best.as_ref().is_none_or(|(bq, _, _)| q > *bq) {
            best = Some((q, epoch, model.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if epoch - best_epoch >= config.patience && epoch + 1 < config.max_iterations {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok((
        best_model,
        TrainReport {
            mode: config.mode,
            epochs,
            best_epoch,
            stopped_early,
        },
    ))
}
