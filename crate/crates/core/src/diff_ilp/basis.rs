/// Coordinates with a smaller magnitude are dropped from the basis.
pub const BASIS_DROP: f64 = 1e-12;

/// `dz = sum_i lambda_i * Delta_i` with `Delta_i` the signed indicator of the
/// `i` largest-magnitude coordinates.
///
/// Stored in prefix form: `Delta_i` sets `order[j].1` at flattened index
/// `order[j].0` for every `j <= i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisDecomposition {
    pub len: usize,
    pub order: Vec<(usize, i8)>,
    pub lambdas: Vec<f64>,
}

impl BasisDecomposition {
    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.order.len()
    }

    /// Dense `Delta_i`.
    pub fn delta(&self, i: usize) -> Vec<i8> {
        let mut out = vec![0i8; self.len];
        for &(idx, s) in &self.order[..=i] {
            out[idx] = s;
        }
        out
    }

    /// `(lambda_i, Delta_i)` pairs, dense.
    pub fn pairs(&self) -> Vec<(f64, Vec<i8>)> {
        (0..self.num_terms()).map(|i| (self.lambdas[i], self.delta(i))).collect()
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        // coordinate at sorted position p carries sign * sum_{i >= p} lambda_i
        let mut out = vec![0.0; self.len];
        let mut tail = 0.0;
        for p in (0..self.order.len()).rev() {
            tail += self.lambdas[p];
            let (idx, s) = self.order[p];
            out[idx] = f64::from(s) * tail;
        }
        out
    }
}

/// Decomposes a flattened `dz`. Sorting is stable, so equal magnitudes keep
/// their flattened order.
pub fn build_basis(dz: &[f64]) -> BasisDecomposition {
    let mut idx: Vec<usize> = (0..dz.len()).filter(|&i| dz[i].abs() >= BASIS_DROP).collect();
    idx.sort_by(|&a, &b| dz[b].abs().total_cmp(&dz[a].abs()));
    let order: Vec<(usize, i8)> = idx.iter().map(|&i| (i, if dz[i] > 0.0 { 1 } else { -1 })).collect();
    let lambdas = (0..idx.len())
        .map(|j| {
            let here = dz[idx[j]].abs();
            match idx.get(j + 1) {
                Some(&next) => here - dz[next].abs(),
                None => here,
            }
        })
        .collect();
    BasisDecomposition {
        len: dz.len(),
        order,
        lambdas,
    }
}
