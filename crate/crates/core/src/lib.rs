//! Budget-constrained incentive allocation.
//!
//! A monotone multi-treatment uplift network ([`model`]) predicts per-user
//! cost and revenue uplifts; an exact multi-choice knapsack solver
//! ([`knapsack`]) turns them into an allocation under a budget; and a
//! differentiable allocation layer ([`diff_ilp`]) sends an allocation loss
//! back into the network during joint training ([`trainer`]).

pub mod tensor;
pub mod dataset;
pub mod knapsack;
pub mod diff_ilp;
pub mod model;
pub mod metrics;
pub mod trainer;
