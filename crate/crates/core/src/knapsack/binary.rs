//! 0/1 knapsack for a single treatment, depth-first branch and bound with the
//! fractional (Dantzig) upper bound.

use super::{AllocationProblem, AllocationSolution, KnapsackError};

struct Item {
    user: usize,
    value: f64,
    cost: f64,
}

struct Search<'a> {
    items: &'a [Item],
    taken: Vec<bool>,
    best_value: f64,
    best: Vec<bool>,
    nodes: u64,
    limit: u64,
}

impl Search<'_> {
    /// Fractional relaxation over `items[from..]` with `room` left.
    fn bound(&self, from: usize, room: f64) -> f64 {
        let mut room = room;
        let mut total = 0.0;
        for it in &self.items[from..] {
            if it.cost <= room {
                room -= it.cost;
                total += it.value;
            } else {
                return total + it.value * room / it.cost;
            }
        }
        total
    }

    fn dfs(&mut self, j: usize, room: f64, value: f64) {
        self.nodes += 1;
        if value > self.best_value {
            self.best_value = value;
            self.best.clone_from(&self.taken);
        }
        if j == self.items.len() || self.nodes > self.limit {
            return;
        }
        let bound = value + self.bound(j, room);
        if bound <= self.best_value + 1e-12 * (1.0 + self.best_value.abs()) {
            return;
        }
        let it = &self.items[j];
        let (cost, gain) = (it.cost, it.value);
        if cost <= room {
            self.taken[j] = true;
            self.dfs(j + 1, room - cost, value + gain);
            self.taken[j] = false;
        }
        self.dfs(j + 1, room, value);
    }
}

/// Exact solver for `K = 1`. Users with non-positive revenue uplift are never
/// treated; free users with positive uplift always are.
pub fn solve_binary_knapsack(problem: &AllocationProblem) -> Result<AllocationSolution, KnapsackError> {
    if problem.num_options() != 2 {
        return Err(KnapsackError::NotBinary(problem.num_options().saturating_sub(1)));
    }
    let n = problem.num_users();
    let mut choices = vec![0usize; n];
    let mut items = Vec::new();
    for i in 0..n {
        let v = problem.tau_revenue().get(i, 1);
        let c = problem.tau_cost().get(i, 1);
        if v <= 0.0 {
            continue;
        }
        if c == 0.0 {
            choices[i] = 1;
        } else {
            items.push(Item { user: i, value: v, cost: c });
        }
    }
    items.sort_by(|a, b| {
        (b.value / b.cost)
            .total_cmp(&(a.value / a.cost))
            .then(a.user.cmp(&b.user))
    });

    let mut search = Search {
        items: &items,
        taken: vec![false; items.len()],
        best_value: 0.0,
        best: vec![false; items.len()],
        nodes: 0,
        limit: super::DEFAULT_NODE_LIMIT,
    };
    search.dfs(0, problem.budget(), 0.0);
    let optimal = search.nodes <= search.limit;
    for (it, &t) in items.iter().zip(&search.best) {
        if t {
            choices[it.user] = 1;
        }
    }
    Ok(AllocationSolution::from_choices(problem, choices, optimal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseMatrix;

    fn problem(values: &[f64], costs: &[f64], budget: f64) -> AllocationProblem {
        let v = DenseMatrix::column(values);
        let c = DenseMatrix::column(costs);
        AllocationProblem::from_treatment_columns(&v, &c, budget).unwrap()
    }

    #[test]
    fn textbook_instance() {
        let p = problem(&[6.0, 10.0, 12.0], &[1.0, 2.0, 3.0], 5.0);
        let s = solve_binary_knapsack(&p).unwrap();
        assert_eq!(s.objective, 22.0);
        assert_eq!(s.choices, vec![0, 1, 1]);
        assert!(s.optimal);
    }

    #[test]
    fn zero_budget_takes_only_free_items() {
        let p = problem(&[1.0, 2.0, -1.0], &[0.0, 1.0, 0.0], 0.0);
        let s = solve_binary_knapsack(&p).unwrap();
        assert_eq!(s.choices, vec![1, 0, 0]);
    }

    #[test]
    fn rejects_multi_treatment() {
        let z = DenseMatrix::zeros(2, 3);
        let p = AllocationProblem::new(z.clone(), z, 1.0).unwrap();
        assert_eq!(solve_binary_knapsack(&p), Err(KnapsackError::NotBinary(2)));
    }
}
