//! Monotone multi-treatment uplift network.
//!
//! A shared bottom maps features to a representation `phi`. One revenue head
//! and one cost head, each reused for every treatment, read `[phi; delta_k]`
//! and their squared output is the non-negative increment from level `k-1`
//! to `k`. Base heads read `phi` alone and predict level 0. Outcomes are the
//! running sum of the base prediction and the increments.

mod checkpoint;
mod net;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_HEADER};
pub use net::{Batch, LossNodes, ModelGraph};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::dataset::{ResponseKind, Standardizer};
use crate::tensor::{softplus, DenseMatrix, PowerIteration, TensorError};

/// Power-iteration steps per spectral-norm refresh.
pub const POWER_ITERATIONS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("feature dimension {got} does not match the model's {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub num_treatments: usize,
    pub hidden_dims: Vec<usize>,
    pub head_dims: Vec<usize>,
    pub embed_dim: usize,
    pub revenue_kind: ResponseKind,
    pub cost_kind: ResponseKind,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_treatments: usize) -> Self {
        Self {
            input_dim,
            num_treatments,
            hidden_dims: vec![64, 32],
            head_dims: vec![32],
            embed_dim: 8,
            revenue_kind: ResponseKind::Continuous,
            cost_kind: ResponseKind::Continuous,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.num_treatments == 0 {
            return bad("num_treatments must be positive");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        if self.hidden_dims.iter().chain(&self.head_dims).any(|&h| h == 0) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    /// Width of the shared representation.
    pub fn repr_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }
}

/// Affine layer `x W + b`, `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

impl Layer {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut draw = |r, c| {
            let mut m = DenseMatrix::zeros(r, c);
            m.data_mut().iter_mut().for_each(|v| *v = dist.sample(rng));
            m
        };
        let weight = draw(fan_in, fan_out);
        let bias = draw(1, fan_out);
        Self { weight, bias }
    }
}

fn stack(rng: &mut ChaCha8Rng, input: usize, widths: &[usize], output: Option<usize>) -> Vec<Layer> {
    let mut dims = vec![input];
    dims.extend_from_slice(widths);
    dims.extend(output);
    dims.windows(2).map(|w| Layer::init(rng, w[0], w[1])).collect()
}

fn push_layers<'a>(out: &mut Vec<(String, &'a DenseMatrix)>, name: &str, layers: &'a [Layer]) {
    for (i, l) in layers.iter().enumerate() {
        out.push((format!("{name}.{i}.weight"), &l.weight));
        out.push((format!("{name}.{i}.bias"), &l.bias));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub shared_bottom: Vec<Layer>,
    /// Row `k-1` is the embedding of treatment `k`.
    pub treatment_embeddings: DenseMatrix,
    pub revenue_head: Vec<Layer>,
    pub cost_head: Vec<Layer>,
    pub base_revenue_head: Vec<Layer>,
    pub base_cost_head: Vec<Layer>,
    /// One state per layer of the revenue head, then the cost head.
    pub lipschitz_state: Vec<PowerIteration>,
    pub standardizer: Standardizer,
}

/// Raw predictions. For a binary channel the outcome columns are logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBundle {
    pub y_hat_revenue: DenseMatrix,
    pub y_hat_cost: DenseMatrix,
    pub increments_revenue: DenseMatrix,
    pub increments_cost: DenseMatrix,
}

/// Predicted uplifts with the zero control column, `n x (K+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UpliftMatrices {
    pub tau_revenue: DenseMatrix,
    pub tau_cost: DenseMatrix,
}

/// Deterministic initialization: uniform fan-in scaling for affine layers,
/// standard normal embeddings.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.input_dim;
    let shared_bottom = stack(&mut rng, d, &config.hidden_dims, None);
    let phi = config.repr_dim();
    let mut treatment_embeddings = DenseMatrix::zeros(config.num_treatments, config.embed_dim);
    for v in treatment_embeddings.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let head_in = phi + config.embed_dim;
    let revenue_head = stack(&mut rng, head_in, &config.head_dims, Some(1));
    let cost_head = stack(&mut rng, head_in, &config.head_dims, Some(1));
    let base_revenue_head = stack(&mut rng, phi, &config.head_dims, Some(1));
    let base_cost_head = stack(&mut rng, phi, &config.head_dims, Some(1));
    let lipschitz_state = revenue_head
        .iter()
        .chain(&cost_head)
        .enumerate()
        .map(|(j, l)| PowerIteration::seeded(l.weight.cols(), seed ^ (0x5eed_0000 + j as u64)))
        .collect();
    Ok(ModelParams {
        standardizer: Standardizer::identity(d),
        config,
        shared_bottom,
        treatment_embeddings,
        revenue_head,
        cost_head,
        base_revenue_head,
        base_cost_head,
        lipschitz_state,
    })
}

impl ModelParams {
    /// Every trainable tensor with a stable name, in canonical order.
    pub fn tensors(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::new();
        push_layers(&mut out, "shared_bottom", &self.shared_bottom);
        out.push(("treatment_embeddings".to_string(), &self.treatment_embeddings));
        push_layers(&mut out, "revenue_head", &self.revenue_head);
        push_layers(&mut out, "cost_head", &self.cost_head);
        push_layers(&mut out, "base_revenue_head", &self.base_revenue_head);
        push_layers(&mut out, "base_cost_head", &self.base_cost_head);
        out
    }

    /// Mutable views in the order of [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out: Vec<&mut DenseMatrix> = Vec::new();
        for l in self.shared_bottom.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.treatment_embeddings);
        for group in [
            &mut self.revenue_head,
            &mut self.cost_head,
            &mut self.base_revenue_head,
            &mut self.base_cost_head,
        ] {
            for l in group.iter_mut() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    /// Head layers covered by the Lipschitz term, revenue head first.
    pub fn head_layers(&self) -> impl Iterator<Item = &Layer> {
        self.revenue_head.iter().chain(&self.cost_head)
    }

    pub fn standardize(&self, x: &DenseMatrix) -> Result<DenseMatrix, ModelError> {
        if x.cols() != self.config.input_dim {
            return Err(ModelError::FeatureDim {
                expected: self.config.input_dim,
                got: x.cols(),
            });
        }
        Ok(self.standardizer.apply(x))
    }

    /// Forward pass on raw features.
    pub fn predict(&self, x: &DenseMatrix) -> Result<PredictionBundle, ModelError> {
        let z = self.standardize(x)?;
        let mut g = ModelGraph::build(self, z.rows(), None)?;
        g.run(&z)?;
        g.bundle()
    }

    /// Uplift matrices on raw features. Binary channels report the change in
    /// probability, continuous channels the change in outcome.
    pub fn uplift(&self, x: &DenseMatrix) -> Result<UpliftMatrices, ModelError> {
        let z = self.standardize(x)?;
        let mut g = ModelGraph::build(self, z.rows(), None)?;
        g.run(&z)?;
        g.uplift_matrices()
    }

    /// Advances every power-iteration state and returns `(u, v)` per head
    /// layer.
    pub fn refresh_spectral(&mut self, iterations: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let weights: Vec<DenseMatrix> = self.head_layers().map(|l| l.weight.clone()).collect();
        self.lipschitz_state
            .iter_mut()
            .zip(&weights)
            .map(|(s, w)| {
                let e = s.step(w, iterations);
                (e.left, e.right)
            })
            .collect()
    }

    /// Spectral norm estimate per head layer, without touching the stored
    /// state.
    pub fn head_spectral_norms(&self) -> Vec<f64> {
        let mut copy = self.lipschitz_state.clone();
        copy.iter_mut()
            .zip(self.head_layers())
            .map(|(s, l)| s.step(&l.weight, POWER_ITERATIONS).sigma)
            .collect()
    }

    /// Product of `softplus(c_j)` over the head layers.
    pub fn lipschitz_loss(&self) -> f64 {
        self.head_spectral_norms().into_iter().map(softplus).product()
    }
}
