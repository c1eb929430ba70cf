//! Differentiable allocation layer: the forward pass is the exact knapsack
//! solver, the backward pass turns an incoming `dz` into gradients for the
//! cost and revenue uplifts through integer neighbors of `z`.

mod basis;
mod mismatch;

pub use basis::{build_basis, BasisDecomposition, BASIS_DROP};
pub use mismatch::{
    constraint_mismatch, distance_gradient, hyperplane_distance, objective_mismatch, HyperplaneDistance,
    NeighborPoint, DEGENERATE_NORM, FEASIBILITY_TOL,
};

use crate::tensor::{DenseMatrix, Shape};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiffIlpError {
    #[error("{name} has shape {got}, expected {expected}")]
    ShapeMismatch { name: &'static str, expected: Shape, got: Shape },
    #[error("{0} contains a non-finite value")]
    NonFinite(&'static str),
}

/// How neighbors of `z` are generated from `dz`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NeighborScheme {
    /// One basis over the flattened `dz`; neighbors that break one-hot rows
    /// contribute nothing.
    #[default]
    Flattened,
    /// Each row of `dz` is first projected onto the edge from the current
    /// option to the row's most negative entry, giving one one-hot neighbor
    /// per row.
    RowEdge,
}

impl std::str::FromStr for NeighborScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flattened" => Ok(Self::Flattened),
            "row_edge" => Ok(Self::RowEdge),
            other => Err(format!("unknown neighbor scheme `{other}` (expected flattened or row_edge)")),
        }
    }
}

impl std::fmt::Display for NeighborScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Flattened => "flattened",
            Self::RowEdge => "row_edge",
        })
    }
}

/// Sign of the revenue-side update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RevenueSign {
    /// `d tau_r = sum lambda (z - z')`: a descent step raises the revenue of
    /// the neighbor, which is what a maximizing solver needs.
    #[default]
    Maximize,
    /// `d tau_r = sum lambda (z' - z)`, the gradient of the mismatch as
    /// written; suited to a minimizing solver.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct BackwardOptions {
    pub scheme: NeighborScheme,
    pub revenue_sign: RevenueSign,
}

/// Gradients leaving the allocation layer. The budget is never learned.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientPacket {
    pub dz: DenseMatrix,
    pub d_tau_cost: DenseMatrix,
    pub d_tau_revenue: DenseMatrix,
    pub d_budget: f64,
}

struct Accum<'a> {
    tau_cost: &'a DenseMatrix,
    budget: f64,
    norm: f64,
    dot_z: f64,
    /// coefficient on z in d tau_c
    on_z: f64,
    /// coefficient on tau_c in d tau_c
    on_tau: f64,
    cost_sparse: Vec<f64>,
    rev_sparse: Vec<f64>,
    rev_sign: f64,
}

impl<'a> Accum<'a> {
    fn new(tau_cost: &'a DenseMatrix, z: &DenseMatrix, budget: f64, sign: RevenueSign) -> Self {
        Self {
            tau_cost,
            budget,
            norm: tau_cost.frobenius_norm(),
            dot_z: mismatch::inner(tau_cost, z),
            on_z: 0.0,
            on_tau: 0.0,
            cost_sparse: vec![0.0; tau_cost.data().len()],
            rev_sparse: vec![0.0; tau_cost.data().len()],
            rev_sign: match sign {
                RevenueSign::Maximize => 1.0,
                RevenueSign::Literal => -1.0,
            },
        }
    }

    /// Adds one neighbor `z - Delta` with weight `lambda`; `delta` lists the
    /// nonzero entries of `Delta` and `dot_prime` is `tau_c . z'`. Returns
    /// the per-coordinate weight the caller must spread over `Delta` for the
    /// cost and revenue sides.
    fn neighbor(&mut self, lambda: f64, dot_prime: f64) -> (f64, f64) {
        let feasible = dot_prime <= self.budget + FEASIBILITY_TOL;
        let mut cost_w = 0.0;
        if self.norm > DEGENERATE_NORM {
            let n3 = self.norm * self.norm * self.norm;
            if feasible {
                let u = self.dot_z - self.budget;
                self.on_z += lambda * sgn(u) / self.norm;
                self.on_tau += lambda * u.abs() / n3;
            } else {
                let u = dot_prime - self.budget;
                self.on_z += lambda * sgn(u) / self.norm;
                self.on_tau += lambda * u.abs() / n3;
                // z' = z - Delta
                cost_w = -lambda * sgn(u) / self.norm;
            }
        }
        // (z - z') = Delta for the maximizing sign
        let rev_w = if feasible { self.rev_sign * lambda } else { 0.0 };
        (cost_w, rev_w)
    }

    fn finish(self, z: &DenseMatrix, dz: &DenseMatrix) -> GradientPacket {
        let mut d_cost = DenseMatrix::zeros(z.rows(), z.cols());
        for (((o, &zv), &t), &s) in d_cost
            .data_mut()
            .iter_mut()
            .zip(z.data())
            .zip(self.tau_cost.data())
            .zip(&self.cost_sparse)
        {
            *o = self.on_z * zv - self.on_tau * t + s;
        }
        let d_rev = DenseMatrix::from_vec(z.rows(), z.cols(), self.rev_sparse).expect("finite gradient");
        GradientPacket {
            dz: dz.clone(),
            d_tau_cost: d_cost,
            d_tau_revenue: d_rev,
            d_budget: 0.0,
        }
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_shapes(dz: &DenseMatrix, z: &DenseMatrix, tc: &DenseMatrix, tr: &DenseMatrix) -> Result<(), DiffIlpError> {
    let expected = z.shape();
    for (name, m) in [("dz", dz), ("tau_cost", tc), ("tau_revenue", tr)] {
        if m.shape() != expected {
            return Err(DiffIlpError::ShapeMismatch {
                name,
                expected,
                got: m.shape(),
            });
        }
    }
    for (name, m) in [("dz", dz), ("z", z), ("tau_cost", tc), ("tau_revenue", tr)] {
        if !m.is_finite() {
            return Err(DiffIlpError::NonFinite(name));
        }
    }
    Ok(())
}

/// Backward pass with the default options.
pub fn backward(
    dz: &DenseMatrix,
    z: &DenseMatrix,
    tau_cost: &DenseMatrix,
    tau_revenue: &DenseMatrix,
    budget: f64,
) -> Result<GradientPacket, DiffIlpError> {
    backward_with(dz, z, tau_cost, tau_revenue, budget, BackwardOptions::default())
}

pub fn backward_with(
    dz: &DenseMatrix,
    z: &DenseMatrix,
    tau_cost: &DenseMatrix,
    tau_revenue: &DenseMatrix,
    budget: f64,
    options: BackwardOptions,
) -> Result<GradientPacket, DiffIlpError> {
    check_shapes(dz, z, tau_cost, tau_revenue)?;
    let mut acc = Accum::new(tau_cost, z, budget, options.revenue_sign);
    match options.scheme {
        NeighborScheme::Flattened => flattened(dz, z, &mut acc),
        NeighborScheme::RowEdge => row_edge(dz, z, &mut acc),
    }
    Ok(acc.finish(z, dz))
}

fn flattened(dz: &DenseMatrix, z: &DenseMatrix, acc: &mut Accum<'_>) {
    let basis = build_basis(dz.data());
    if basis.is_empty() {
        return;
    }
    let cols = z.cols();
    let zd = z.data();
    let tc = acc.tau_cost.data().to_vec();
    let mut zp = zd.to_vec();
    let binary = |v: f64| v == 0.0 || v == 1.0;
    let mut non_binary = zp.iter().filter(|&&v| !binary(v)).count();
    let mut row_sum: Vec<f64> = (0..z.rows()).map(|r| z.row(r).iter().sum()).collect();
    let mut bad_rows = row_sum.iter().filter(|&&s| s != 1.0).count();
    let mut dot_prime = acc.dot_z;
    // per-term weights, spread over the prefix afterwards
    let mut cost_w = vec![0.0; basis.num_terms()];
    let mut rev_w = vec![0.0; basis.num_terms()];
    for (q, &(idx, s)) in basis.order.iter().enumerate() {
        let s = f64::from(s);
        let before = zp[idx];
        let after = before - s;
        non_binary = non_binary + usize::from(!binary(after)) - usize::from(!binary(before));
        zp[idx] = after;
        let r = idx / cols;
        let was_bad = row_sum[r] != 1.0;
        row_sum[r] -= s;
        let is_bad = row_sum[r] != 1.0;
        bad_rows = bad_rows + usize::from(is_bad) - usize::from(was_bad);
        dot_prime -= s * tc[idx];
        let lambda = basis.lambdas[q];
        if non_binary == 0 && bad_rows == 0 && lambda > 0.0 {
            let (c, v) = acc.neighbor(lambda, dot_prime);
            cost_w[q] = c;
            rev_w[q] = v;
        }
    }
    // sum_q w_q Delta_q: position p gets sign_p * sum_{q >= p} w_q
    let (mut tail_c, mut tail_r) = (0.0, 0.0);
    for p in (0..basis.num_terms()).rev() {
        tail_c += cost_w[p];
        tail_r += rev_w[p];
        let (idx, s) = basis.order[p];
        acc.cost_sparse[idx] += f64::from(s) * tail_c;
        acc.rev_sparse[idx] += f64::from(s) * tail_r;
    }
}

fn row_edge(dz: &DenseMatrix, z: &DenseMatrix, acc: &mut Accum<'_>) {
    let cols = z.cols();
    for i in 0..z.rows() {
        let Some(current) = z.row(i).iter().position(|&v| v == 1.0) else {
            continue;
        };
        let r = dz.row(i);
        let mut target = current;
        for (j, &v) in r.iter().enumerate() {
            if v < r[target] {
                target = j;
            }
        }
        if target == current {
            continue;
        }
        let lambda = 0.5 * (r[current] - r[target]);
        if lambda < BASIS_DROP {
            continue;
        }
        let (a, b) = (i * cols + current, i * cols + target);
        let tc = acc.tau_cost.data();
        let dot_prime = acc.dot_z - tc[a] + tc[b];
        // Delta = e_current - e_target
        let (c, v) = acc.neighbor(lambda, dot_prime);
        acc.cost_sparse[a] += c;
        acc.cost_sparse[b] -= c;
        acc.rev_sparse[a] += v;
        acc.rev_sparse[b] -= v;
    }
}
