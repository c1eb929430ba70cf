use crate::tensor::DenseMatrix;

/// Adaptive-moment update with the usual decay constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `params` and `grads` must keep the same order and shapes across calls.
    pub fn update(&mut self, params: Vec<&mut DenseMatrix>, grads: &[DenseMatrix]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| DenseMatrix::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = DenseMatrix::row_vector(&[1.0, -1.0, 0.0]);
        let g = DenseMatrix::row_vector(&[0.3, -2.0, 0.0]);
        let mut opt = Adam::new(0.1);
        opt.update(vec![&mut p], std::slice::from_ref(&g));
        // bias-corrected first step is lr * sign(g)
        assert!((p.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((p.get(0, 1) + 0.9).abs() < 1e-6);
        assert_eq!(p.get(0, 2), 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = DenseMatrix::row_vector(&[3.0, -4.0]);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let g = p.scaled(2.0);
            opt.update(vec![&mut p], &[g]);
        }
        assert!(p.frobenius_norm() < 1e-3);
        assert_eq!(opt.steps(), 2000);
    }
}
