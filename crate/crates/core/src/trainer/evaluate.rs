use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::dataset::Dataset;
use crate::knapsack::{solve_mckp, AllocationProblem};
use crate::metrics::{
    aucc, auuc, eom, kendall_bins, mt_aucc, pair_efficiency, qini, CurvePoints, EomEstimate, Observation, ScoredSample,
};
use crate::model::{ModelParams, UpliftMatrices};
use crate::tensor::DenseMatrix;

/// Anything that can score a dataset with uplift matrices.
pub trait UpliftSource {
    fn uplift_for(&self, data: &Dataset) -> Result<UpliftMatrices, TrainError>;
}

impl UpliftSource for ModelParams {
    fn uplift_for(&self, data: &Dataset) -> Result<UpliftMatrices, TrainError> {
        Ok(self.uplift(&data.features())?)
    }
}

/// Reads the true uplifts from the dataset's ground-truth curves.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleModel;

impl UpliftSource for OracleModel {
    fn uplift_for(&self, data: &Dataset) -> Result<UpliftMatrices, TrainError> {
        let truth = data
            .ground_truth
            .as_ref()
            .ok_or_else(|| TrainError::InvalidConfig("oracle needs ground-truth curves".into()))?;
        let (tau_revenue, tau_cost) = truth.uplifts();
        Ok(UpliftMatrices { tau_revenue, tau_cost })
    }
}

/// Allocation outcome at one budget. EOM values are per-user means;
/// increments are relative to the all-control policy.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetRow {
    pub budget: f64,
    /// Predicted cost of the chosen allocation.
    pub spent: f64,
    pub policy: Vec<usize>,
    pub eom: EomEstimate,
    pub incremental_revenue: f64,
    pub incremental_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    /// Ranking metrics by name.
    pub metrics: Vec<(String, f64)>,
    pub warnings: Vec<String>,
    pub control: EomEstimate,
    pub rows: Vec<BudgetRow>,
}

impl EvaluationReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Plain `key = value` lines.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, v) in &self.metrics {
            writeln!(w, "{k} = {v}")?;
        }
        writeln!(w, "control_eom_revenue = {}", self.control.revenue)?;
        writeln!(w, "control_eom_cost = {}", self.control.cost)?;
        for r in &self.rows {
            let b = r.budget;
            writeln!(w, "budget.{b}.spent = {}", r.spent)?;
            writeln!(w, "budget.{b}.eom_revenue = {}", r.eom.revenue)?;
            writeln!(w, "budget.{b}.eom_cost = {}", r.eom.cost)?;
            writeln!(w, "budget.{b}.incremental_revenue = {}", r.incremental_revenue)?;
            writeln!(w, "budget.{b}.incremental_cost = {}", r.incremental_cost)?;
            writeln!(w, "budget.{b}.matched = {}", r.eom.matched)?;
        }
        for warning in &self.warnings {
            writeln!(w, "# warning: {warning}")?;
        }
        Ok(())
    }
}

pub fn write_budget_csv<W: Write>(mut w: W, rows: &[BudgetRow]) -> std::io::Result<()> {
    writeln!(w, "budget,spent,eom_revenue,eom_cost,incremental_revenue,incremental_cost,matched")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.budget, r.spent, r.eom.revenue, r.eom.cost, r.incremental_revenue, r.incremental_cost, r.eom.matched
        )?;
    }
    Ok(())
}

/// Budget-sweep cost curve: `(incremental cost, incremental revenue)` per
/// row, keeping only points that move right.
pub fn sweep_curve(rows: &[BudgetRow]) -> CurvePoints {
    let mut c = CurvePoints::default();
    if rows.is_empty() {
        return c;
    }
    c.x.push(0.0);
    c.y.push(0.0);
    for r in rows {
        if r.incremental_cost > *c.x.last().expect("origin") {
            c.x.push(r.incremental_cost);
            c.y.push(r.incremental_revenue);
        }
    }
    c
}

fn observations(data: &Dataset) -> Vec<Observation> {
    data.samples
        .iter()
        .map(|s| Observation {
            treatment: s.treatment,
            cost: s.cost,
            revenue: s.revenue,
        })
        .collect()
}

/// Uniformly random treatments that respect the budget under `tau_cost`:
/// users are visited in random order, each draws a level, and keeps it
/// only if it still fits.
pub fn random_policy(tau_cost: &DenseMatrix, budget: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..tau_cost.rows()).collect();
    order.shuffle(&mut rng);
    let mut policy = vec![0; tau_cost.rows()];
    let mut spent = 0.0;
    for i in order {
        let k = rng.random_range(0..tau_cost.cols());
        let c = tau_cost.get(i, k);
        if spent + c <= budget {
            spent += c;
            policy[i] = k;
        }
    }
    policy
}

fn record<E: std::fmt::Display>(
    metrics: &mut Vec<(String, f64)>,
    warnings: &mut Vec<String>,
    name: &str,
    value: Result<f64, E>,
) {
    match value {
        Ok(v) => metrics.push((name.to_string(), v)),
        Err(e) => warnings.push(format!("{name}: {e}")),
    }
}

/// Ranking metrics plus, for every budget, the exact allocation on the
/// source's uplifts and its EOM. Single-treatment data gets AUUC, Qini,
/// Kendall and AUCC; multi-treatment data gets MT-AUCC.
pub fn evaluate(source: &dyn UpliftSource, test: &Dataset, budgets: &[f64]) -> Result<EvaluationReport, TrainError> {
    let u = source.uplift_for(test)?;
    let obs = observations(test);
    let mut metrics = Vec::new();
    let mut warnings = Vec::new();
    if test.num_treatments == 1 {
        let scored = |key: &dyn Fn(usize) -> f64| -> Vec<ScoredSample> {
            obs.iter()
                .enumerate()
                .map(|(i, o)| ScoredSample {
                    score: key(i),
                    treatment: o.treatment,
                    cost: o.cost,
                    revenue: o.revenue,
                })
                .collect()
        };
        let by_uplift = scored(&|i| u.tau_revenue.get(i, 1));
        let by_roi = scored(&|i| pair_efficiency(u.tau_revenue.get(i, 1), u.tau_cost.get(i, 1)));
        record(&mut metrics, &mut warnings, "auuc", auuc(&by_uplift));
        record(&mut metrics, &mut warnings, "qini", qini(&by_uplift));
        match kendall_bins(&by_uplift, 10) {
            Ok(k) => {
                warnings.extend(k.warnings.iter().map(|w| format!("kendall: {w}")));
                metrics.push(("kendall".into(), k.tau));
            }
            Err(e) => warnings.push(format!("kendall: {e}")),
        }
        record(&mut metrics, &mut warnings, "aucc", aucc(&by_roi));
    } else {
        record(&mut metrics, &mut warnings, "mt_aucc", mt_aucc(&u.tau_revenue, &u.tau_cost, &obs));
    }
    let control = eom(&vec![0; obs.len()], &obs)?;
    let problem = AllocationProblem::new(u.tau_revenue, u.tau_cost, 0.0)?;
    let mut rows = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let solution = solve_mckp(&problem.with_budget(b)?);
        if !solution.optimal {
            warnings.push(format!("budget {b}: node limit reached, allocation may be suboptimal"));
        }
        let e = eom(&solution.choices, &obs)?;
        rows.push(BudgetRow {
            budget: b,
            spent: solution.spent,
            incremental_revenue: e.revenue - control.revenue,
            incremental_cost: e.cost - control.cost,
            policy: solution.choices,
            eom: e,
        });
    }
    Ok(EvaluationReport {
        metrics,
        warnings,
        control,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};

    fn synthetic(n: usize, k: usize, noise: f64, seed: u64) -> Dataset {
        generate_synthetic(&SyntheticConfig {
            n,
            d: 5,
            k,
            noise_scale: noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_budget_is_all_control() {
        let ds = synthetic(300, 2, 0.5, 1);
        let r = evaluate(&OracleModel, &ds, &[0.0]).unwrap();
        assert!(r.rows[0].policy.iter().all(|&k| k == 0));
        let means = ds.group_means();
        assert!((r.rows[0].eom.revenue - means[0].1).abs() < 1e-12);
        assert_eq!(r.rows[0].incremental_revenue, 0.0);
        assert!(r.metric("mt_aucc").is_some());
    }

    #[test]
    fn ample_budget_takes_each_users_best_level() {
        let ds = synthetic(200, 3, 0.5, 2);
        let (tr, tc) = ds.ground_truth.as_ref().unwrap().uplifts();
        let b = tc.sum() + 1.0;
        let r = evaluate(&OracleModel, &ds, &[b]).unwrap();
        for (i, &k) in r.rows[0].policy.iter().enumerate() {
            let best = (0..4).map(|j| tr.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(tr.get(i, k), best);
        }
    }

    #[test]
    fn oracle_eom_tracks_true_outcome() {
        let ds = synthetic(4000, 3, 0.0, 3);
        let truth = ds.ground_truth.clone().unwrap();
        let r = evaluate(&OracleModel, &ds, &[400.0]).unwrap();
        let policy = &r.rows[0].policy;
        let n = ds.len() as f64;
        let true_mean: f64 = policy.iter().enumerate().map(|(i, &k)| truth.revenue.get(i, k)).sum::<f64>() / n;
        // standard error of the matched mean
        let matched: Vec<f64> = ds
            .samples
            .iter()
            .zip(policy)
            .filter(|(s, &k)| s.treatment == k)
            .map(|(s, _)| s.revenue)
            .collect();
        let m = matched.len() as f64;
        let mean = matched.iter().sum::<f64>() / m;
        let var = matched.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        assert!((r.rows[0].eom.revenue - true_mean).abs() <= 2.0 * se, "{} vs {true_mean} (se {se})", r.rows[0].eom.revenue);
    }

    #[test]
    fn binary_suite_and_budget_rows() {
        let ds = synthetic(1000, 1, 0.5, 4);
        let r = evaluate(&OracleModel, &ds, &[10.0, 20.0, 40.0]).unwrap();
        for name in ["auuc", "qini", "kendall", "aucc"] {
            assert!(r.metric(name).unwrap().is_finite(), "{name}");
        }
        assert_eq!(r.rows.len(), 3);
        let mut out = Vec::new();
        write_budget_csv(&mut out, &r.rows).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 4);
        let mut text = Vec::new();
        r.write_text(&mut text).unwrap();
        assert!(String::from_utf8(text).unwrap().contains("budget.20.eom_revenue = "));
    }

    #[test]
    fn sweep_endpoints_bracket_the_middle() {
        let ds = synthetic(3000, 2, 0.0, 5);
        let (tr, tc) = ds.ground_truth.as_ref().unwrap().uplifts();
        let top = tc.sum() + 1.0;
        let grid: Vec<f64> = (0..=10).map(|j| top * j as f64 / 10.0).collect();
        let r = evaluate(&OracleModel, &ds, &grid).unwrap();
        let gain = |p: &[usize]| p.iter().enumerate().map(|(i, &k)| tr.get(i, k)).sum::<f64>();
        let lo = gain(&r.rows[0].policy);
        let hi = gain(&r.rows[10].policy);
        assert_eq!(lo, 0.0);
        for row in &r.rows {
            let g = gain(&row.policy);
            assert!(g >= lo && g <= hi, "{g} outside [{lo}, {hi}]");
        }
        let c = sweep_curve(&r.rows);
        assert!(c.x.windows(2).all(|w| w[1] > w[0]));
        assert!(sweep_curve(&[]).is_empty());
    }

    #[test]
    fn random_policy_respects_budget() {
        let tc = DenseMatrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![0.0, 1.5, 3.0], vec![0.0, 0.5, 1.0]]).unwrap();
        for seed in 0..20 {
            let p = random_policy(&tc, 2.0, seed);
            let spent: f64 = p.iter().enumerate().map(|(i, &k)| tc.get(i, k)).sum();
            assert!(spent <= 2.0);
        }
        assert_eq!(random_policy(&tc, 1.0, 3), random_policy(&tc, 1.0, 3));
    }
}
