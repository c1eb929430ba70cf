use super::{AllocationProblem, AllocationSolution, KnapsackError};

/// Largest number of assignments [`brute_force_oracle`] will enumerate:
/// `4^10`, enough for ten users with three treatments.
pub const BRUTE_FORCE_LIMIT: f64 = 1_048_576.0;

/// Enumerates every assignment; first best in lexicographic order wins.
pub fn brute_force_oracle(problem: &AllocationProblem) -> Result<AllocationSolution, KnapsackError> {
    let n = problem.num_users();
    let levels = problem.num_options();
    let count = (levels as f64).powi(n as i32);
    if count > BRUTE_FORCE_LIMIT {
        return Err(KnapsackError::TooLarge(count));
    }
    let mut current = vec![0usize; n];
    let mut best = current.clone();
    let (mut best_value, _) = problem.evaluate(&current);
    loop {
        // odometer increment, last user fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(AllocationSolution::from_choices(problem, best, true));
            }
            pos -= 1;
            current[pos] += 1;
            if current[pos] < levels {
                break;
            }
            current[pos] = 0;
        }
        let (value, spent) = problem.evaluate(&current);
        if spent <= problem.budget() && value > best_value {
            best_value = value;
            best.clone_from(&current);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseMatrix;

    #[test]
    fn two_user_instance() {
        let r = DenseMatrix::from_rows(&[vec![0.0, 3.0, 5.0], vec![0.0, 4.0, 6.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 3.0]]).unwrap();
        let p = AllocationProblem::new(r, c, 3.0).unwrap();
        let s = brute_force_oracle(&p).unwrap();
        // (1,1): 7 at cost 3; (2,0): 5; (0,2): 6
        assert_eq!(s.choices, vec![1, 1]);
        assert_eq!(s.objective, 7.0);
        assert_eq!(s.spent, 3.0);
    }

    #[test]
    fn refuses_huge_instances() {
        let z = DenseMatrix::zeros(30, 3);
        let p = AllocationProblem::new(z.clone(), z, 1.0).unwrap();
        assert!(matches!(brute_force_oracle(&p), Err(KnapsackError::TooLarge(_))));
    }
}
