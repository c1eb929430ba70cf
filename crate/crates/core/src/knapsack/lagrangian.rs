use super::{AllocationProblem, AllocationSolution};

/// Threshold policy from a single budget multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianResult {
    pub lambda: f64,
    pub solution: AllocationSolution,
}

fn policy_at(problem: &AllocationProblem, lambda: f64) -> Vec<usize> {
    (0..problem.num_users())
        .map(|i| {
            let r = problem.tau_revenue().row(i);
            let c = problem.tau_cost().row(i);
            let mut best = 0;
            let mut best_score = 0.0;
            for k in 1..r.len() {
                let score = r[k] - lambda * c[k];
                if score > best_score {
                    best = k;
                    best_score = score;
                }
            }
            best
        })
        .collect()
}

/// Bisects on `lambda` so each user picks `argmax_k tau_r - lambda * tau_c`
/// (lowest index on ties) and the total cost stays within budget. Returns
/// the smallest feasible multiplier found.
pub fn lagrangian_policy(problem: &AllocationProblem) -> LagrangianResult {
    let budget = problem.budget();
    let feasible = |lambda: f64| {
        let choices = policy_at(problem, lambda);
        let sol = AllocationSolution::from_choices(problem, choices, false);
        (sol.spent <= budget, sol)
    };
    let (ok, sol) = feasible(0.0);
    if ok {
        return LagrangianResult { lambda: 0.0, solution: sol };
    }
    // beyond the largest ratio only free options can win
    let mut hi = 1.0f64;
    for i in 0..problem.num_users() {
        for k in 1..problem.num_options() {
            let c = problem.tau_cost().get(i, k);
            if c > 0.0 {
                hi = hi.max(2.0 * problem.tau_revenue().get(i, k) / c);
            }
        }
    }
    let mut lo = 0.0;
    let (_, mut best) = feasible(hi);
    for _ in 0..200 {
        if hi - lo <= 1e-13 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (ok, sol) = feasible(mid);
        if ok {
            hi = mid;
            best = sol;
        } else {
            lo = mid;
        }
    }
    LagrangianResult { lambda: hi, solution: best }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knapsack::solve_mckp;
    use crate::tensor::DenseMatrix;

    #[test]
    fn feasible_and_below_exact() {
        let r = DenseMatrix::from_rows(&[
            vec![0.0, 3.0, 5.0],
            vec![0.0, 4.0, 6.0],
            vec![0.0, 1.0, 1.5],
        ])
        .unwrap();
        let c = DenseMatrix::from_rows(&[
            vec![0.0, 1.0, 2.0],
            vec![0.0, 2.0, 3.0],
            vec![0.0, 1.0, 2.0],
        ])
        .unwrap();
        for b in [0.0, 1.0, 2.5, 4.0, 100.0] {
            let p = AllocationProblem::new(r.clone(), c.clone(), b).unwrap();
            let l = lagrangian_policy(&p);
            assert!(l.solution.spent <= b);
            assert!(l.solution.objective <= solve_mckp(&p).objective + 1e-12);
        }
        let p = AllocationProblem::new(r, c, 100.0).unwrap();
        assert_eq!(lagrangian_policy(&p).lambda, 0.0);
    }
}
