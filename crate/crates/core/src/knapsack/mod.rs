//! Budgeted allocation: one option per user, maximize total revenue uplift
//! subject to a single cost budget.
//!
//! Column 0 of every matrix is the untreated control option with zero
//! revenue and zero cost, so "exactly one option per user" is always
//! feasible.

mod binary;
mod brute;
mod io;
mod lagrangian;
mod mckp;

pub use binary::solve_binary_knapsack;
pub use brute::{brute_force_oracle, BRUTE_FORCE_LIMIT};
pub use io::{load_allocation_csv, read_allocation_csv, write_allocation_csv};
pub use lagrangian::{lagrangian_policy, LagrangianResult};
pub use mckp::{solve_mckp, solve_mckp_with_limit, DEFAULT_NODE_LIMIT};

use crate::tensor::DenseMatrix;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KnapsackError {
    #[error("revenue matrix {revenue} and cost matrix {cost} differ in shape")]
    ShapeMismatch { revenue: String, cost: String },
    #[error("negative cost {value} at user {user}, option {option}")]
    NegativeCost { user: usize, option: usize, value: f64 },
    #[error("control column must be zero; user {user} has ({revenue}, {cost})")]
    NonZeroControl { user: usize, revenue: f64, cost: f64 },
    #[error("non-finite entry at user {user}, option {option}")]
    NonFinite { user: usize, option: usize },
    #[error("budget must be finite and non-negative, got {0}")]
    InvalidBudget(f64),
    #[error("binary knapsack needs exactly one treatment column, got K = {0}")]
    NotBinary(usize),
    #[error("instance too large for enumeration: {0} assignments")]
    TooLarge(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Revenue and cost uplifts `n x (K+1)` with a budget.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationProblem {
    tau_revenue: DenseMatrix,
    tau_cost: DenseMatrix,
    budget: f64,
}

impl AllocationProblem {
    pub fn new(tau_revenue: DenseMatrix, tau_cost: DenseMatrix, budget: f64) -> Result<Self, KnapsackError> {
        if tau_revenue.shape() != tau_cost.shape() || tau_revenue.cols() == 0 {
            return Err(KnapsackError::ShapeMismatch {
                revenue: tau_revenue.shape().to_string(),
                cost: tau_cost.shape().to_string(),
            });
        }
        if !(budget.is_finite() && budget >= 0.0) {
            return Err(KnapsackError::InvalidBudget(budget));
        }
        for i in 0..tau_revenue.rows() {
            for k in 0..tau_revenue.cols() {
                let (v, c) = (tau_revenue.get(i, k), tau_cost.get(i, k));
                if !v.is_finite() || !c.is_finite() {
                    return Err(KnapsackError::NonFinite { user: i, option: k });
                }
                if c < 0.0 {
                    return Err(KnapsackError::NegativeCost {
                        user: i,
                        option: k,
                        value: c,
                    });
                }
            }
            if tau_revenue.get(i, 0) != 0.0 || tau_cost.get(i, 0) != 0.0 {
                return Err(KnapsackError::NonZeroControl {
                    user: i,
                    revenue: tau_revenue.get(i, 0),
                    cost: tau_cost.get(i, 0),
                });
            }
        }
        Ok(Self {
            tau_revenue,
            tau_cost,
            budget,
        })
    }

    /// Builds a problem from `n x K` treatment-only matrices by prepending
    /// the zero control column.
    pub fn from_treatment_columns(revenue: &DenseMatrix, cost: &DenseMatrix, budget: f64) -> Result<Self, KnapsackError> {
        let augment = |m: &DenseMatrix| {
            let mut out = DenseMatrix::zeros(m.rows(), m.cols() + 1);
            for r in 0..m.rows() {
                out.row_mut(r)[1..].copy_from_slice(m.row(r));
            }
            out
        };
        Self::new(augment(revenue), augment(cost), budget)
    }

    pub fn num_users(&self) -> usize {
        self.tau_revenue.rows()
    }

    /// Options per user, `K + 1`.
    pub fn num_options(&self) -> usize {
        self.tau_revenue.cols()
    }

    pub fn tau_revenue(&self) -> &DenseMatrix {
        &self.tau_revenue
    }

    pub fn tau_cost(&self) -> &DenseMatrix {
        &self.tau_cost
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn with_budget(&self, budget: f64) -> Result<Self, KnapsackError> {
        Self::new(self.tau_revenue.clone(), self.tau_cost.clone(), budget)
    }

    /// Total `(objective, spent)` of an assignment, summed in user order.
    pub fn evaluate(&self, choices: &[usize]) -> (f64, f64) {
        let mut value = 0.0;
        let mut cost = 0.0;
        for (i, &k) in choices.iter().enumerate() {
            value += self.tau_revenue.get(i, k);
            cost += self.tau_cost.get(i, k);
        }
        (value, cost)
    }
}

/// One option per user with its totals.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationSolution {
    pub choices: Vec<usize>,
    pub objective: f64,
    pub spent: f64,
    /// Set when the solver proved optimality.
    pub optimal: bool,
}

impl AllocationSolution {
    pub fn from_choices(problem: &AllocationProblem, choices: Vec<usize>, optimal: bool) -> Self {
        let (objective, spent) = problem.evaluate(&choices);
        Self {
            choices,
            objective,
            spent,
            optimal,
        }
    }

    pub fn all_control(problem: &AllocationProblem) -> Self {
        Self::from_choices(problem, vec![0; problem.num_users()], false)
    }

    /// One-hot assignment matrix `z`, `n x levels`.
    pub fn z(&self, levels: usize) -> DenseMatrix {
        let mut z = DenseMatrix::zeros(self.choices.len(), levels);
        for (i, &k) in self.choices.iter().enumerate() {
            z.set(i, k, 1.0);
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let r = DenseMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[vec![0.0, -1.0]]).unwrap();
        assert!(matches!(
            AllocationProblem::new(r.clone(), c, 1.0),
            Err(KnapsackError::NegativeCost { .. })
        ));
        let c = DenseMatrix::from_rows(&[vec![0.5, 1.0]]).unwrap();
        assert!(matches!(
            AllocationProblem::new(r.clone(), c, 1.0),
            Err(KnapsackError::NonZeroControl { .. })
        ));
        let c = DenseMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(AllocationProblem::new(r, c, -1.0).is_err());
    }

    #[test]
    fn z_is_one_hot() {
        let r = DenseMatrix::zeros(3, 3);
        let p = AllocationProblem::new(r.clone(), r, 0.0).unwrap();
        let s = AllocationSolution::from_choices(&p, vec![0, 2, 1], true);
        let z = s.z(3);
        for i in 0..3 {
            assert_eq!(z.row(i).iter().sum::<f64>(), 1.0);
        }
        assert_eq!(z.get(1, 2), 1.0);
    }
}
