use super::{ModelError, ModelParams, PredictionBundle, UpliftMatrices};
use crate::dataset::{Dataset, ResponseKind, Standardizer};
use crate::tensor::{DenseMatrix, Gradients, Graph, NodeId};

/// Standardized features with the observed treatment and outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: DenseMatrix,
    pub treatments: Vec<usize>,
    pub costs: Vec<f64>,
    pub revenues: Vec<f64>,
}

impl Batch {
    pub fn from_dataset(data: &Dataset, standardizer: &Standardizer) -> Self {
        Self {
            features: standardizer.apply(&data.features()),
            treatments: data.treatments(),
            costs: data.costs(),
            revenues: data.revenues(),
        }
    }

    pub fn len(&self) -> usize {
        self.treatments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatments.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            treatments: indices.iter().map(|&i| self.treatments[i]).collect(),
            costs: indices.iter().map(|&i| self.costs[i]).collect(),
            revenues: indices.iter().map(|&i| self.revenues[i]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossNodes {
    pub prediction: NodeId,
    pub lipschitz: Option<NodeId>,
    pub total: NodeId,
}

/// The network unrolled for a fixed number of rows.
pub struct ModelGraph {
    pub graph: Graph,
    pub input: NodeId,
    /// Parameter nodes in the order of [`ModelParams::tensors`].
    pub params: Vec<NodeId>,
    pub y_revenue: NodeId,
    pub y_cost: NodeId,
    pub inc_revenue: NodeId,
    pub inc_cost: NodeId,
    pub tau_revenue: NodeId,
    pub tau_cost: NodeId,
    /// Spectral estimates `u^T W v`, one per head layer.
    pub spectral: Vec<NodeId>,
    pub lipschitz: Option<NodeId>,
    rows: usize,
    revenue_kind: ResponseKind,
    cost_kind: ResponseKind,
}

fn take_layers(it: &mut impl Iterator<Item = NodeId>, count: usize) -> Vec<(NodeId, NodeId)> {
    (0..count)
        .map(|_| {
            let w = it.next().expect("weight parameter");
            let b = it.next().expect("bias parameter");
            (w, b)
        })
        .collect()
}

fn affine_stack(g: &mut Graph, mut x: NodeId, layers: &[(NodeId, NodeId)]) -> Result<NodeId, ModelError> {
    for (i, &(w, b)) in layers.iter().enumerate() {
        x = g.affine(x, w, b)?;
        if i + 1 < layers.len() {
            x = g.elu(x);
        }
    }
    Ok(x)
}

impl ModelGraph {
    /// Unrolls `model` for `n` rows. With `spectral` vectors `(u, v)` per
    /// head layer the Lipschitz product is added as a node.
    pub fn build(model: &ModelParams, n: usize, spectral: Option<&[(Vec<f64>, Vec<f64>)]>) -> Result<Self, ModelError> {
        let cfg = &model.config;
        let k = cfg.num_treatments;
        let mut g = Graph::new();
        let input = g.input(n, cfg.input_dim);
        let params: Vec<NodeId> = model.tensors().into_iter().map(|(_, t)| g.parameter(t.clone())).collect();
        let mut it = params.iter().copied();
        let bottom = take_layers(&mut it, model.shared_bottom.len());
        let embed = it.next().expect("embedding parameter");
        let rev_head = take_layers(&mut it, model.revenue_head.len());
        let cost_head = take_layers(&mut it, model.cost_head.len());
        let base_rev = take_layers(&mut it, model.base_revenue_head.len());
        let base_cost = take_layers(&mut it, model.base_cost_head.len());

        let mut phi = input;
        for &(w, b) in &bottom {
            let a = g.affine(phi, w, b)?;
            phi = g.elu(a);
        }

        // row i*K + (k-1) pairs user i with treatment k
        let rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let levels: Vec<usize> = (0..n).flat_map(|_| 0..k).collect();
        let phi_rep = g.embed_lookup(phi, &rep)?;
        let deltas = g.embed_lookup(embed, &levels)?;
        let head_in = g.concat(&[phi_rep, deltas])?;

        let channel = |g: &mut Graph, head: &[(NodeId, NodeId)], base: &[(NodeId, NodeId)], kind: ResponseKind| -> Result<[NodeId; 3], ModelError> {
            let raw = affine_stack(g, head_in, head)?;
            let sq = g.square(raw);
            let inc = g.reshape(sq, n, k)?;
            let y0 = affine_stack(g, phi, base)?;
            let joined = g.concat(&[y0, inc])?;
            let y = g.cumsum_cols(joined);
            let tau = match kind {
                ResponseKind::Continuous => {
                    let zero = g.constant(DenseMatrix::zeros(n, 1));
                    let joined = g.concat(&[zero, inc])?;
                    g.cumsum_cols(joined)
                }
                ResponseKind::Binary => {
                    let p = g.sigmoid(y);
                    g.sub_first_col(p)
                }
            };
            Ok([y, inc, tau])
        };
        let [y_revenue, inc_revenue, tau_revenue] = channel(&mut g, &rev_head, &base_rev, cfg.revenue_kind)?;
        let [y_cost, inc_cost, tau_cost] = channel(&mut g, &cost_head, &base_cost, cfg.cost_kind)?;

        let mut spectral_nodes = Vec::new();
        let mut lipschitz = None;
        if let Some(vectors) = spectral {
            let head_weights: Vec<NodeId> = rev_head.iter().chain(&cost_head).map(|&(w, _)| w).collect();
            if vectors.len() != head_weights.len() {
                return Err(ModelError::InvalidConfig(format!(
                    "{} spectral vector pairs for {} head layers",
                    vectors.len(),
                    head_weights.len()
                )));
            }
            let mut prod: Option<NodeId> = None;
            for (&w, (u, v)) in head_weights.iter().zip(vectors) {
                let c = g.bilinear(w, u, v)?;
                spectral_nodes.push(c);
                let s = g.softplus(c);
                prod = Some(match prod {
                    None => s,
                    Some(p) => g.mul(p, s)?,
                });
            }
            lipschitz = prod;
        }

        Ok(Self {
            graph: g,
            input,
            params,
            y_revenue,
            y_cost,
            inc_revenue,
            inc_cost,
            tau_revenue,
            tau_cost,
            spectral: spectral_nodes,
            lipschitz,
            rows: n,
            revenue_kind: cfg.revenue_kind,
            cost_kind: cfg.cost_kind,
        })
    }

    /// Adds the prediction loss for `batch` and the weighted total.
    pub fn attach_losses(&mut self, batch: &Batch, alpha: f64) -> Result<LossNodes, ModelError> {
        if batch.len() != self.rows {
            return Err(ModelError::InvalidConfig(format!(
                "batch of {} rows for a graph of {}",
                batch.len(),
                self.rows
            )));
        }
        let g = &mut self.graph;
        let mut channel = |y: NodeId, targets: &[f64], kind: ResponseKind| -> Result<NodeId, ModelError> {
            let picked = g.select_cols(y, &batch.treatments)?;
            let t = g.constant(DenseMatrix::column(targets));
            Ok(match kind {
                ResponseKind::Continuous => g.mse(picked, t)?,
                ResponseKind::Binary => g.bce(picked, t)?,
            })
        };
        let lc = channel(self.y_cost, &batch.costs, self.cost_kind)?;
        let lr = channel(self.y_revenue, &batch.revenues, self.revenue_kind)?;
        let prediction = self.graph.add(lc, lr)?;
        let total = match self.lipschitz {
            Some(l) => {
                let weighted = self.graph.scale(l, alpha);
                self.graph.add(prediction, weighted)?
            }
            None => prediction,
        };
        Ok(LossNodes {
            prediction,
            lipschitz: self.lipschitz,
            total,
        })
    }

    /// Feeds standardized features and evaluates.
    pub fn run(&mut self, x: &DenseMatrix) -> Result<(), ModelError> {
        self.graph.forward(&[(self.input, x.clone())])?;
        Ok(())
    }

    pub fn bundle(&self) -> Result<PredictionBundle, ModelError> {
        Ok(PredictionBundle {
            y_hat_revenue: self.graph.value(self.y_revenue)?.clone(),
            y_hat_cost: self.graph.value(self.y_cost)?.clone(),
            increments_revenue: self.graph.value(self.inc_revenue)?.clone(),
            increments_cost: self.graph.value(self.inc_cost)?.clone(),
        })
    }

    pub fn uplift_matrices(&self) -> Result<UpliftMatrices, ModelError> {
        Ok(UpliftMatrices {
            tau_revenue: self.graph.value(self.tau_revenue)?.clone(),
            tau_cost: self.graph.value(self.tau_cost)?.clone(),
        })
    }

    /// Gradients in the order of [`ModelParams::tensors`], zeros where a
    /// parameter did not influence the seeds.
    pub fn parameter_gradients(&self, grads: &Gradients) -> Vec<DenseMatrix> {
        self.params
            .iter()
            .map(|&p| grads.get_or_zeros(p, self.graph.shape(p)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, Layer, ModelConfig};
    use super::*;
    use crate::tensor::{sigmoid, softplus};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64, k: usize) -> ModelParams {
        let mut c = ModelConfig::new(4, k);
        c.hidden_dims = vec![6, 5];
        c.head_dims = vec![3];
        c.embed_dim = 2;
        init_model(c, seed).unwrap()
    }

    fn features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DenseMatrix {
        let mut x = DenseMatrix::zeros(n, d);
        x.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        x
    }

    fn elu(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            x.exp_m1()
        }
    }

    fn dense(x: &[f64], l: &Layer) -> Vec<f64> {
        (0..l.weight.cols())
            .map(|j| l.bias.get(0, j) + x.iter().enumerate().map(|(i, v)| v * l.weight.get(i, j)).sum::<f64>())
            .collect()
    }

    fn mlp(mut x: Vec<f64>, ls: &[Layer]) -> f64 {
        for (i, l) in ls.iter().enumerate() {
            x = dense(&x, l);
            if i + 1 < ls.len() {
                x = x.into_iter().map(elu).collect();
            }
        }
        x[0]
    }

    #[test]
    fn matches_hand_forward_pass() {
        let m = model(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = features(&mut rng, 1, 4);
        let b = m.predict(&x).unwrap();
        let mut phi = x.row(0).to_vec();
        for l in &m.shared_bottom {
            phi = dense(&phi, l).into_iter().map(elu).collect();
        }
        let y0 = mlp(phi.clone(), &m.base_revenue_head);
        assert!((b.y_hat_revenue.get(0, 0) - y0).abs() < 1e-12);
        for k in 1..=3 {
            let mut input = phi.clone();
            input.extend_from_slice(m.treatment_embeddings.row(k - 1));
            let raw = mlp(input, &m.revenue_head);
            let step = b.y_hat_revenue.get(0, k) - b.y_hat_revenue.get(0, k - 1);
            assert!((step - raw * raw).abs() < 1e-12);
            assert!((b.increments_revenue.get(0, k - 1) - raw * raw).abs() < 1e-15);
        }
    }

    #[test]
    fn monotone_outcomes_and_uplifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let m = model(seed, 3);
            let x = features(&mut rng, 7, 4);
            let b = m.predict(&x).unwrap();
            let u = m.uplift(&x).unwrap();
            for mat in [&b.y_hat_revenue, &b.y_hat_cost, &u.tau_revenue, &u.tau_cost] {
                for r in 0..mat.rows() {
                    for c in 1..mat.cols() {
                        assert!(mat.get(r, c) >= mat.get(r, c - 1));
                    }
                }
            }
            for r in 0..7 {
                assert_eq!(u.tau_revenue.get(r, 0), 0.0);
                let total: f64 = b.increments_revenue.row(r).iter().sum();
                assert!((u.tau_revenue.get(r, 3) - total).abs() < 1e-12);
                for c in 0..4 {
                    let diff = b.y_hat_cost.get(r, c) - b.y_hat_cost.get(r, 0);
                    assert!((u.tau_cost.get(r, c) - diff).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_final_head_layer_gives_flat_outcomes() {
        let mut m = model(2, 2);
        for head in [&mut m.revenue_head, &mut m.cost_head] {
            let last = head.last_mut().unwrap();
            last.weight = DenseMatrix::zeros(last.weight.rows(), 1);
            last.bias = DenseMatrix::zeros(1, 1);
        }
        let x = features(&mut ChaCha8Rng::seed_from_u64(5), 3, 4);
        let b = m.predict(&x).unwrap();
        let u = m.uplift(&x).unwrap();
        assert_eq!(u.tau_revenue.frobenius_norm(), 0.0);
        assert_eq!(u.tau_cost.frobenius_norm(), 0.0);
        for r in 0..3 {
            assert!(b.y_hat_revenue.row(r).iter().all(|&v| v == b.y_hat_revenue.get(r, 0)));
        }
    }

    #[test]
    fn shared_head_moves_every_level() {
        let mut m = model(4, 3);
        let x = features(&mut ChaCha8Rng::seed_from_u64(6), 2, 4);
        let before = m.predict(&x).unwrap().increments_revenue;
        m.revenue_head[0].weight = m.revenue_head[0].weight.scaled(1.5);
        let after = m.predict(&x).unwrap().increments_revenue;
        for r in 0..2 {
            for c in 0..3 {
                assert_ne!(before.get(r, c), after.get(r, c));
            }
        }
    }

    #[test]
    fn binary_uplift_is_on_probability_scale() {
        let mut m = model(8, 2);
        m.config.cost_kind = ResponseKind::Binary;
        let x = features(&mut ChaCha8Rng::seed_from_u64(7), 3, 4);
        let b = m.predict(&x).unwrap();
        let u = m.uplift(&x).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let want = sigmoid(b.y_hat_cost.get(r, c)) - sigmoid(b.y_hat_cost.get(r, 0));
                assert!((u.tau_cost.get(r, c) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn prediction_loss_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = model(1, 3);
        m.config.cost_kind = ResponseKind::Binary;
        let n = 11;
        let batch = Batch {
            features: features(&mut rng, n, 4),
            treatments: (0..n).map(|_| rng.random_range(0..4)).collect(),
            costs: (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
            revenues: (0..n).map(|_| rng.random_range(-1.0..3.0)).collect(),
        };
        let mut g = ModelGraph::build(&m, n, None).unwrap();
        let losses = g.attach_losses(&batch, 1.0).unwrap();
        g.run(&batch.features).unwrap();
        let got = g.graph.value(losses.prediction).unwrap().item();
        let b = g.bundle().unwrap();
        let mut want = 0.0;
        for i in 0..n {
            let t = batch.treatments[i];
            let yr = b.y_hat_revenue.get(i, t);
            let yc = b.y_hat_cost.get(i, t);
            want += (yr - batch.revenues[i]).powi(2);
            want += softplus(yc) - batch.costs[i] * yc;
        }
        want /= n as f64;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn single_sample_mse_example() {
        let mut m = model(0, 1);
        for head in [&mut m.base_revenue_head, &mut m.base_cost_head, &mut m.revenue_head, &mut m.cost_head] {
            let last = head.last_mut().unwrap();
            last.weight = DenseMatrix::zeros(last.weight.rows(), 1);
            last.bias = DenseMatrix::zeros(1, 1);
        }
        let batch = Batch {
            features: DenseMatrix::zeros(1, 4),
            treatments: vec![1],
            costs: vec![2.0],
            revenues: vec![2.0],
        };
        let mut g = ModelGraph::build(&m, 1, None).unwrap();
        let l = g.attach_losses(&batch, 0.0).unwrap();
        g.run(&batch.features).unwrap();
        assert_eq!(g.graph.value(l.total).unwrap().item(), 8.0);
    }
}
