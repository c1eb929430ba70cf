use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use e3ir_core::diff_ilp::build_basis;
use e3ir_core::knapsack::{brute_force_oracle, solve_mckp, AllocationProblem};
use e3ir_core::metrics::{aucc, auuc, kendall_bins, kendall_tau_b, qini, ScoredSample};
use e3ir_core::model::{init_model, ModelConfig};
use e3ir_core::tensor::DenseMatrix;

fn trials(n: usize) -> impl Strategy<Value = Vec<(usize, f64, f64)>> {
    prop::collection::vec((0usize..2, 0.0f64..3.0, -2.0f64..5.0), n)
        .prop_filter("both arms present", |v| {
            v.iter().any(|s| s.0 == 0) && v.iter().any(|s| s.0 == 1)
        })
}

fn scored(rows: &[(usize, f64, f64)], scores: &[f64]) -> Vec<ScoredSample> {
    rows.iter()
        .zip(scores)
        .map(|(&(treatment, cost, revenue), &score)| ScoredSample {
            score,
            treatment,
            cost,
            revenue,
        })
        .collect()
}

fn permutation(n: usize, seed: u64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|i| i as f64).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn problem(n: usize, k: usize) -> impl Strategy<Value = AllocationProblem> {
    (
        prop::collection::vec(-1.0f64..3.0, n * k),
        prop::collection::vec(0.0f64..2.0, n * k),
        0.0f64..1.0,
    )
        .prop_map(move |(r, c, frac)| {
            let mut tr = DenseMatrix::zeros(n, k + 1);
            let mut tc = DenseMatrix::zeros(n, k + 1);
            for i in 0..n {
                for j in 0..k {
                    tr.set(i, j + 1, r[i * k + j]);
                    tc.set(i, j + 1, c[i * k + j]);
                }
            }
            AllocationProblem::new(tr, tc, frac * n as f64).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_depend_only_on_ranking(rows in trials(40), seed in any::<u64>()) {
        let base = permutation(rows.len(), seed);
        let warped: Vec<f64> = base.iter().map(|s| (s / 7.0).exp() * 3.0 - 11.0).collect();
        let a = scored(&rows, &base);
        let b = scored(&rows, &warped);
        prop_assert_eq!(auuc(&a).unwrap(), auuc(&b).unwrap());
        prop_assert_eq!(qini(&a).unwrap(), qini(&b).unwrap());
        match (aucc(&a), aucc(&b)) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "aucc disagreed: {:?}", other),
        }
    }

    #[test]
    fn normalized_areas_are_unit_bounded(rows in trials(30), scores in prop::collection::vec(-5.0f64..5.0, 30)) {
        let s = scored(&rows, &scores);
        let u = auuc(&s).unwrap();
        prop_assert!((0.0..=1.0).contains(&u), "auuc {}", u);
        if let Ok(c) = aucc(&s) {
            prop_assert!((0.0..=1.0).contains(&c), "aucc {}", c);
        }
    }

    #[test]
    fn kendall_is_bounded(rows in trials(60), scores in prop::collection::vec(-5.0f64..5.0, 60)) {
        if let Ok(k) = kendall_bins(&scored(&rows, &scores), 10) {
            prop_assert!((-1.0..=1.0).contains(&k.tau));
        }
    }

    #[test]
    fn tau_b_is_symmetric_and_bounded(a in prop::collection::vec(-3i32..3, 2..20), seed in any::<u64>()) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b = {
            let mut b = a.clone();
            b.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            b
        };
        let ab = kendall_tau_b(&a, &b);
        prop_assert_eq!(ab, kendall_tau_b(&b, &a));
        if let Some(t) = ab {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&t));
        }
    }

    #[test]
    fn mckp_is_feasible_and_monotone(p in problem(12, 3), bump in 0.0f64..4.0) {
        let sol = solve_mckp(&p);
        prop_assert!(sol.spent <= p.budget() + 1e-9);
        prop_assert!(sol.objective >= 0.0);
        let (obj, spent) = p.evaluate(&sol.choices);
        prop_assert!((obj - sol.objective).abs() < 1e-9);
        prop_assert!((spent - sol.spent).abs() < 1e-9);
        let richer = solve_mckp(&p.with_budget(p.budget() + bump).unwrap());
        prop_assert!(richer.objective >= sol.objective - 1e-9);
    }

    #[test]
    fn mckp_matches_exhaustive_search(p in problem(6, 3)) {
        let fast = solve_mckp(&p);
        let slow = brute_force_oracle(&p).unwrap();
        prop_assert!((fast.objective - slow.objective).abs() <= 1e-9 * slow.objective.abs().max(1.0));
    }

    #[test]
    fn basis_reconstructs_input(dz in prop::collection::vec(prop_oneof![Just(0.0), -3.0f64..3.0], 0..40)) {
        let basis = build_basis(&dz);
        for (a, b) in basis.reconstruct().iter().zip(&dz) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert!(basis.lambdas.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn uplift_is_monotone(seed in any::<u64>(), k in 1usize..5, x in prop::collection::vec(-6.0f64..6.0, 3)) {
        let mut c = ModelConfig::new(3, k);
        c.hidden_dims = vec![5];
        c.head_dims = vec![4];
        c.embed_dim = 2;
        let model = init_model(c, seed).unwrap();
        let u = model.uplift(&DenseMatrix::from_vec(1, 3, x).unwrap()).unwrap();
        for m in [&u.tau_revenue, &u.tau_cost] {
            prop_assert_eq!(m.get(0, 0), 0.0);
            for j in 1..m.cols() {
                prop_assert!(m.get(0, j) >= m.get(0, j - 1));
            }
        }
    }
}

#[test]
fn kendall_null_variance() {
    // independent rankings of m items: Var(tau) = 2(2m+5) / (9m(m-1))
    let m = 10usize;
    let reps = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base: Vec<f64> = (0..m).map(|i| i as f64).collect();
    let taus: Vec<f64> = (0..reps)
        .map(|_| {
            let mut p = base.clone();
            p.shuffle(&mut rng);
            kendall_tau_b(&base, &p).unwrap()
        })
        .collect();
    let mean = taus.iter().sum::<f64>() / reps as f64;
    let var = taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let expected = 2.0 * (2 * m + 5) as f64 / (9.0 * (m * (m - 1)) as f64);
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var - expected).abs() / expected < 0.05, "var {var} vs {expected}");
}
