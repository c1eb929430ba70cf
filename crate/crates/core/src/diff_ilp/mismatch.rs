use crate::tensor::DenseMatrix;

/// Flattened inner product. Panics if the shapes differ.
pub(crate) fn inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.dot(b).expect("matching shapes")
}

/// `tau_c . z <= B + FEASIBILITY_TOL` counts as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Cost vectors with a smaller norm are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Candidate `z' = z - Delta` with its flags evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborPoint {
    pub z_prime: DenseMatrix,
    /// Every entry is 0/1 and every row sums to one.
    pub in_space: bool,
    pub feasible: bool,
}

impl NeighborPoint {
    pub fn new(z_prime: DenseMatrix, tau_cost: &DenseMatrix, budget: f64) -> Self {
        let in_space = (0..z_prime.rows()).all(|r| {
            let row = z_prime.row(r);
            row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().sum::<f64>() == 1.0
        });
        let feasible = inner(tau_cost, &z_prime) <= budget + FEASIBILITY_TOL;
        Self {
            z_prime,
            in_space,
            feasible,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperplaneDistance {
    pub value: f64,
    pub degenerate: bool,
}

/// `|tau_c . z - B| / ||tau_c||` over flattened matrices.
pub fn hyperplane_distance(tau_cost: &DenseMatrix, budget: f64, point: &DenseMatrix) -> HyperplaneDistance {
    let norm = tau_cost.frobenius_norm();
    if norm <= DEGENERATE_NORM {
        return HyperplaneDistance {
            value: 0.0,
            degenerate: true,
        };
    }
    HyperplaneDistance {
        value: (inner(tau_cost, point) - budget).abs() / norm,
        degenerate: false,
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Closed-form derivative of the distance in `tau_c`:
/// `sign(u) p / ||tau|| - |u| tau / ||tau||^3` with `u = tau . p - B`.
pub fn distance_gradient(tau_cost: &DenseMatrix, budget: f64, point: &DenseMatrix) -> DenseMatrix {
    let norm = tau_cost.frobenius_norm();
    let mut g = DenseMatrix::zeros(tau_cost.rows(), tau_cost.cols());
    if norm <= DEGENERATE_NORM {
        return g;
    }
    let u = inner(tau_cost, point) - budget;
    let a = sign(u) / norm;
    let b = u.abs() / (norm * norm * norm);
    for ((out, &p), &t) in g.data_mut().iter_mut().zip(point.data()).zip(tau_cost.data()) {
        *out = a * p - b * t;
    }
    g
}

/// Cost-side mismatch and its gradient in `tau_c`.
pub fn constraint_mismatch(
    neighbor: &NeighborPoint,
    z: &DenseMatrix,
    tau_cost: &DenseMatrix,
    budget: f64,
) -> (f64, DenseMatrix) {
    let zero = || DenseMatrix::zeros(tau_cost.rows(), tau_cost.cols());
    if !neighbor.in_space || neighbor.z_prime == *z {
        return (0.0, zero());
    }
    let p = if neighbor.feasible { z } else { &neighbor.z_prime };
    let d = hyperplane_distance(tau_cost, budget, p);
    if d.degenerate {
        return (0.0, zero());
    }
    (d.value, distance_gradient(tau_cost, budget, p))
}

/// Revenue-side mismatch `tau_r . (z' - z)` and its gradient `z' - z`,
/// zero unless `z'` is a feasible member of the assignment space.
pub fn objective_mismatch(neighbor: &NeighborPoint, z: &DenseMatrix, tau_revenue: &DenseMatrix) -> (f64, DenseMatrix) {
    if !neighbor.in_space || !neighbor.feasible {
        return (0.0, DenseMatrix::zeros(tau_revenue.rows(), tau_revenue.cols()));
    }
    let mut diff = neighbor.z_prime.clone();
    diff.axpy(-1.0, z).expect("matching shapes");
    (inner(tau_revenue, &diff), diff)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> DenseMatrix {
        DenseMatrix::row_vector(v)
    }

    #[test]
    fn distance_examples() {
        let d = hyperplane_distance(&row(&[3.0, 4.0]), 2.0, &row(&[1.0, 1.0]));
        assert_eq!(d.value, 1.0);
        let on = hyperplane_distance(&row(&[3.0, 4.0]), 3.0, &row(&[1.0, 0.0]));
        assert_eq!(on.value, 0.0);
        let scaled = hyperplane_distance(&row(&[6.0, 8.0]), 4.0, &row(&[1.0, 1.0]));
        assert!((scaled.value - d.value).abs() < 1e-15);
        assert!(hyperplane_distance(&row(&[0.0, 0.0]), 1.0, &row(&[1.0, 1.0])).degenerate);
    }

    #[test]
    fn infeasible_neighbor_gradient_matches_differences() {
        let tau = row(&[3.0, 4.0]);
        // one user, two options; z' = (1,1) is not one-hot so check the
        // distance gradient directly at that point
        let p = row(&[1.0, 1.0]);
        let g = distance_gradient(&tau, 2.0, &p);
        let h = 1e-6;
        for j in 0..2 {
            let mut up = tau.clone();
            up.data_mut()[j] += h;
            let mut dn = tau.clone();
            dn.data_mut()[j] -= h;
            let fd = (hyperplane_distance(&up, 2.0, &p).value - hyperplane_distance(&dn, 2.0, &p).value) / (2.0 * h);
            assert!((fd - g.data()[j]).abs() / fd.abs().max(1e-6) < 1e-5);
        }
    }

    #[test]
    fn mismatch_zero_branches() {
        let z = row(&[1.0, 0.0]);
        let tau = row(&[0.0, 4.0]);
        let same = NeighborPoint::new(z.clone(), &tau, 2.0);
        assert_eq!(constraint_mismatch(&same, &z, &tau, 2.0).0, 0.0);
        assert_eq!(objective_mismatch(&same, &z, &row(&[0.0, 1.0])).0, 0.0);
        let outside = NeighborPoint::new(row(&[1.0, 1.0]), &tau, 2.0);
        assert!(!outside.in_space);
        let (v, g) = constraint_mismatch(&outside, &z, &tau, 2.0);
        assert_eq!(v, 0.0);
        assert_eq!(g.frobenius_norm(), 0.0);
        let infeasible = NeighborPoint::new(row(&[0.0, 1.0]), &tau, 2.0);
        assert!(infeasible.in_space && !infeasible.feasible);
        assert_eq!(constraint_mismatch(&infeasible, &z, &tau, 2.0).0, 0.5);
        assert_eq!(objective_mismatch(&infeasible, &z, &row(&[0.0, 1.0])).0, 0.0);
    }

    #[test]
    fn objective_example() {
        let z = row(&[1.0, 0.0]);
        let n = NeighborPoint::new(row(&[0.0, 1.0]), &row(&[0.0, 0.0]), 1.0);
        let (v, g) = objective_mismatch(&n, &z, &row(&[1.0, 2.0]));
        assert_eq!(v, 1.0);
        assert_eq!(g.data(), &[-1.0, 1.0]);
    }
}
