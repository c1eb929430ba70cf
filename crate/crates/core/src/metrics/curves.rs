use std::io::Write;

use super::{check_binary, ranking, MetricError, Observation, ScoredSample};
use crate::tensor::DenseMatrix;

/// Cost changes at or below this are treated as free.
const FREE_COST: f64 = 1e-12;

/// Curve vertices, starting from the origin.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurvePoints {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl CurvePoints {
    fn origin() -> Self {
        Self {
            x: vec![0.0],
            y: vec![0.0],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Trapezoid area after scaling `x` by its last value and min-max
    /// scaling `y`. `None` if either axis has no spread.
    pub fn normalized_area(&self) -> Option<f64> {
        let x_end = *self.x.last()?;
        if x_end <= 0.0 {
            return None;
        }
        let (lo, hi) = min_max(&self.y);
        if hi - lo <= 0.0 {
            return None;
        }
        let mut area = 0.0;
        for i in 1..self.len() {
            let dx = (self.x[i] - self.x[i - 1]) / x_end;
            let ya = (self.y[i - 1] - lo) / (hi - lo);
            let yb = (self.y[i] - lo) / (hi - lo);
            area += 0.5 * dx * (ya + yb);
        }
        Some(area)
    }

    /// Keeps only vertices that move strictly right.
    fn push_increasing(&mut self, x: f64, y: f64) {
        if x > *self.x.last().unwrap_or(&f64::NEG_INFINITY) {
            self.x.push(x);
            self.y.push(y);
        }
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)))
}

fn trapezoid(c: &CurvePoints) -> f64 {
    (1..c.len())
        .map(|i| 0.5 * (c.x[i] - c.x[i - 1]) * (c.y[i] + c.y[i - 1]))
        .sum()
}

/// Running treated/control sums along a ranking.
#[derive(Default, Clone, Copy)]
struct Arms {
    n_t: f64,
    n_c: f64,
    cost_t: f64,
    cost_c: f64,
    rev_t: f64,
    rev_c: f64,
}

impl Arms {
    fn add(&mut self, s: &ScoredSample) {
        if s.treatment == 1 {
            self.n_t += 1.0;
            self.cost_t += s.cost;
            self.rev_t += s.revenue;
        } else {
            self.n_c += 1.0;
            self.cost_c += s.cost;
            self.rev_c += s.revenue;
        }
    }

    fn mean_gap(&self) -> f64 {
        let mt = if self.n_t > 0.0 { self.rev_t / self.n_t } else { 0.0 };
        let mc = if self.n_c > 0.0 { self.rev_c / self.n_c } else { 0.0 };
        mt - mc
    }

    fn scaled_control(&self, control_sum: f64) -> f64 {
        if self.n_c > 0.0 {
            control_sum * self.n_t / self.n_c
        } else {
            0.0
        }
    }

    fn incremental_revenue(&self) -> f64 {
        self.rev_t - self.scaled_control(self.rev_c)
    }

    fn incremental_cost(&self) -> f64 {
        self.cost_t - self.scaled_control(self.cost_c)
    }
}

/// `(k/n, (mean_t - mean_c) * k)` over prefixes of the ranking.
pub fn uplift_curve(scored: &[ScoredSample]) -> Result<CurvePoints, MetricError> {
    check_binary(scored)?;
    let n = scored.len() as f64;
    let mut curve = CurvePoints::origin();
    let mut arms = Arms::default();
    for (k, i) in ranking(scored.iter().map(|s| s.score)).into_iter().enumerate() {
        arms.add(&scored[i]);
        curve.x.push((k + 1) as f64 / n);
        curve.y.push(arms.mean_gap() * (k + 1) as f64);
    }
    Ok(curve)
}

/// Normalized area under the uplift curve. A flat curve scores 0.5.
pub fn auuc(scored: &[ScoredSample]) -> Result<f64, MetricError> {
    Ok(uplift_curve(scored)?.normalized_area().unwrap_or(0.5))
}

/// Qini coefficient: area between the Qini curve and the straight line to
/// its endpoint, divided by the curve's vertical range. In `[-1, 1]`.
pub fn qini(scored: &[ScoredSample]) -> Result<f64, MetricError> {
    check_binary(scored)?;
    let n = scored.len() as f64;
    let mut curve = CurvePoints::origin();
    let mut arms = Arms::default();
    for (k, i) in ranking(scored.iter().map(|s| s.score)).into_iter().enumerate() {
        arms.add(&scored[i]);
        curve.x.push((k + 1) as f64 / n);
        curve.y.push(arms.incremental_revenue());
    }
    let (lo, hi) = min_max(&curve.y);
    if hi - lo <= 0.0 {
        return Ok(0.0);
    }
    let end = *curve.y.last().expect("non-empty");
    Ok((trapezoid(&curve) - 0.5 * end) / (hi - lo))
}

/// Incremental cost against incremental revenue along the ranking.
pub fn aucc_curve(scored: &[ScoredSample]) -> Result<CurvePoints, MetricError> {
    check_binary(scored)?;
    let mut arms = Arms::default();
    let mut raw = Vec::with_capacity(scored.len());
    for i in ranking(scored.iter().map(|s| s.score)) {
        arms.add(&scored[i]);
        raw.push((arms.incremental_cost(), arms.incremental_revenue()));
    }
    finish_cost_curve(&raw)
}

fn finish_cost_curve(raw: &[(f64, f64)]) -> Result<CurvePoints, MetricError> {
    let total = raw.last().map_or(0.0, |p| p.0);
    if total <= 0.0 {
        return Err(MetricError::DegenerateCostCurve(total));
    }
    let mut curve = CurvePoints::origin();
    for &(x, y) in raw {
        curve.push_increasing(x, y);
    }
    Ok(curve)
}

/// Normalized area under the cost curve. A flat curve scores 0.5.
pub fn aucc(scored: &[ScoredSample]) -> Result<f64, MetricError> {
    Ok(aucc_curve(scored)?.normalized_area().unwrap_or(0.5))
}

/// Ranking key for stepping one user up a level.
pub fn pair_efficiency(d_revenue: f64, d_cost: f64) -> f64 {
    if d_cost.abs() <= FREE_COST {
        if d_revenue > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        d_revenue / d_cost
    }
}

fn check_multi(tau_revenue: &DenseMatrix, tau_cost: &DenseMatrix, obs: &[Observation]) -> Result<(), MetricError> {
    if tau_revenue.rows() != obs.len() || tau_cost.rows() != obs.len() || tau_revenue.cols() != tau_cost.cols() {
        return Err(MetricError::LengthMismatch(format!(
            "uplift {}x{} and {}x{} for {} samples",
            tau_revenue.rows(),
            tau_revenue.cols(),
            tau_cost.rows(),
            tau_cost.cols(),
            obs.len()
        )));
    }
    let k = tau_revenue.cols();
    if k < 2 {
        return Err(MetricError::LengthMismatch("need a control column and at least one treatment".into()));
    }
    if let Some(i) = obs.iter().position(|o| o.treatment >= k) {
        return Err(MetricError::TreatmentOutOfRange {
            index: i,
            treatment: obs[i].treatment,
            levels: k,
        });
    }
    Ok(())
}

/// Multi-treatment cost curve. Every `(user, level)` step is ranked by its
/// revenue-per-cost ratio; as steps are admitted, each level's increment is
/// estimated from admitted users observed at that level versus the level
/// below, and the levels are summed.
pub fn mt_aucc_curve(
    tau_revenue: &DenseMatrix,
    tau_cost: &DenseMatrix,
    obs: &[Observation],
) -> Result<CurvePoints, MetricError> {
    check_multi(tau_revenue, tau_cost, obs)?;
    let n = obs.len();
    let levels = tau_revenue.cols() - 1;
    let mut keys = Vec::with_capacity(n * levels);
    for i in 0..n {
        for k in 1..=levels {
            let dr = tau_revenue.get(i, k) - tau_revenue.get(i, k - 1);
            let dc = tau_cost.get(i, k) - tau_cost.get(i, k - 1);
            keys.push(pair_efficiency(dr, dc));
        }
    }
    // one binary comparison per level: arm "treated" is level k, "control" k-1
    let mut arms = vec![Arms::default(); levels];
    let mut cost = vec![0.0; levels];
    let mut revenue = vec![0.0; levels];
    let mut raw = Vec::with_capacity(keys.len());
    for p in ranking(keys.into_iter()) {
        let (i, k) = (p / levels, p % levels + 1);
        let o = &obs[i];
        if o.treatment == k || o.treatment + 1 == k {
            let a = &mut arms[k - 1];
            a.add(&ScoredSample {
                score: 0.0,
                treatment: usize::from(o.treatment == k),
                cost: o.cost,
                revenue: o.revenue,
            });
            cost[k - 1] = a.incremental_cost();
            revenue[k - 1] = a.incremental_revenue();
        }
        raw.push((cost.iter().sum(), revenue.iter().sum()));
    }
    finish_cost_curve(&raw)
}

/// Normalized area under the multi-treatment cost curve. With a single
/// treatment this is [`aucc`] scored by the revenue-per-cost ratio.
pub fn mt_aucc(tau_revenue: &DenseMatrix, tau_cost: &DenseMatrix, obs: &[Observation]) -> Result<f64, MetricError> {
    check_multi(tau_revenue, tau_cost, obs)?;
    if tau_revenue.cols() == 2 {
        let scored: Vec<ScoredSample> = obs
            .iter()
            .enumerate()
            .map(|(i, o)| ScoredSample {
                score: pair_efficiency(
                    tau_revenue.get(i, 1) - tau_revenue.get(i, 0),
                    tau_cost.get(i, 1) - tau_cost.get(i, 0),
                ),
                treatment: o.treatment,
                cost: o.cost,
                revenue: o.revenue,
            })
            .collect();
        return aucc(&scored);
    }
    Ok(mt_aucc_curve(tau_revenue, tau_cost, obs)?.normalized_area().unwrap_or(0.5))
}

pub fn write_curve_csv<W: Write>(mut w: W, curve: &CurvePoints) -> std::io::Result<()> {
    writeln!(w, "x,y")?;
    for (x, y) in curve.x.iter().zip(&curve.y) {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(score: f64, treatment: usize, cost: f64, revenue: f64) -> ScoredSample {
        ScoredSample {
            score,
            treatment,
            cost,
            revenue,
        }
    }

    fn trial(n: usize, seed: u64) -> Vec<ScoredSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let t = rng.random_range(0..2usize);
                let noise: f64 = rng.random_range(-0.5..0.5);
                let cnoise: f64 = rng.random_range(-0.5..0.5);
                s(1.0, t, 1.0 + t as f64 + cnoise, 1.0 + t as f64 + noise)
            })
            .collect()
    }

    #[test]
    fn hand_uplift_curve() {
        // ranked order: idx 0 (t), 1 (c), 2 (t), 3 (c)
        let d = [s(4.0, 1, 0.0, 1.0), s(3.0, 0, 0.0, 0.0), s(2.0, 1, 0.0, 1.0), s(1.0, 0, 0.0, 1.0)];
        let c = uplift_curve(&d).unwrap();
        assert_eq!(c.x, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(c.y, vec![0.0, 1.0, 2.0, 3.0, 2.0]);
        // scaled y = 0, 1/3, 2/3, 1, 2/3
        let expected = 0.25 * (0.5 * (1.0 / 3.0) + 0.5 * (1.0 / 3.0 + 2.0 / 3.0) + 0.5 * (2.0 / 3.0 + 1.0) + 0.5 * (1.0 + 2.0 / 3.0));
        assert!((auuc(&d).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn qini_six_samples() {
        let d = [
            s(0.9, 1, 0.0, 1.0),
            s(0.8, 1, 0.0, 1.0),
            s(0.7, 0, 0.0, 0.0),
            s(0.6, 1, 0.0, 0.0),
            s(0.5, 0, 0.0, 1.0),
            s(0.4, 0, 0.0, 0.0),
        ];
        // q: 0, 1, 2, 2 - 0*2/1, 2 - 0*3/1, 2 - 1*3/2, 2 - 1*3/3
        let q = [0.0, 1.0, 2.0, 2.0, 2.0, 0.5, 1.0];
        let area: f64 = (1..7).map(|i| (q[i] + q[i - 1]) / 12.0).sum();
        let expected = (area - 0.5) / 2.0;
        assert!((qini(&d).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn qini_zero_outcomes() {
        let d: Vec<_> = (0..10).map(|i| s(i as f64, i % 2, 0.0, 0.0)).collect();
        assert_eq!(qini(&d).unwrap(), 0.0);
    }

    #[test]
    fn uninformative_scores_sit_at_half() {
        let d = trial(10_000, 3);
        let a = auuc(&d).unwrap();
        let c = aucc(&d).unwrap();
        assert!((a - 0.5).abs() < 0.02, "auuc {a}");
        assert!((c - 0.5).abs() < 0.02, "aucc {c}");
        assert!(qini(&d).unwrap().abs() < 0.02);
    }

    #[test]
    fn hand_cost_curve() {
        let d = [s(4.0, 1, 2.0, 3.0), s(3.0, 0, 1.0, 1.0), s(2.0, 1, 2.0, 1.0), s(1.0, 0, 0.0, 0.0)];
        // prefixes: (2,3), (2-1, 3-1) = (1,2), (4-2, 4-2) = (2,2), (4-1, 4-1) = (3,3)
        let c = aucc_curve(&d).unwrap();
        assert_eq!(c.x, vec![0.0, 2.0, 3.0]);
        assert_eq!(c.y, vec![0.0, 3.0, 3.0]);
        // x / 3, y / 3: trapezoids 2/3 * 0.5 + 1/3 * 1
        assert!((aucc(&d).unwrap() - (1.0 / 3.0 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cost_curve() {
        let d = [s(1.0, 1, 0.0, 1.0), s(0.0, 0, 0.0, 0.0)];
        assert_eq!(aucc(&d), Err(MetricError::DegenerateCostCurve(0.0)));
        let neg = [s(1.0, 1, 0.0, 1.0), s(0.0, 0, 1.0, 0.0)];
        assert!(matches!(aucc(&neg), Err(MetricError::DegenerateCostCurve(_))));
    }

    #[test]
    fn input_errors() {
        assert_eq!(auuc(&[s(0.0, 1, 0.0, 0.0)]), Err(MetricError::SingleGroup));
        assert!(matches!(auuc(&[s(0.0, 2, 0.0, 0.0)]), Err(MetricError::NotBinary { index: 0, treatment: 2 })));
        assert_eq!(auuc(&[s(f64::NAN, 1, 0.0, 0.0), s(0.0, 0, 0.0, 0.0)]), Err(MetricError::NonFinite(0)));
    }

    #[test]
    fn single_treatment_mt_aucc_delegates() {
        let d = trial(500, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs: Vec<_> = d.iter().map(|x| x.observation()).collect();
        let tr = DenseMatrix::from_vec(500, 2, (0..1000).map(|j| if j % 2 == 0 { 0.0 } else { rng.random_range(0.0..1.0) }).collect()).unwrap();
        let tc = DenseMatrix::from_vec(500, 2, (0..1000).map(|j| (j % 2) as f64 * 0.5).collect()).unwrap();
        let direct = mt_aucc(&tr, &tc, &obs).unwrap();
        let general = mt_aucc_curve(&tr, &tc, &obs).unwrap().normalized_area().unwrap();
        assert_eq!(direct, general);
    }

    #[test]
    fn multi_treatment_curve_by_hand() {
        // two users, two levels; efficiencies: u0 (2, 1), u1 (3, 0.5)
        let tr = DenseMatrix::from_rows(&[vec![0.0, 2.0, 3.0], vec![0.0, 3.0, 3.5]]).unwrap();
        let tc = DenseMatrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let obs = [
            Observation {
                treatment: 1,
                cost: 1.0,
                revenue: 2.0,
            },
            Observation {
                treatment: 0,
                cost: 0.0,
                revenue: 0.5,
            },
        ];
        // order: (u1,1), (u0,1), (u0,2), (u1,2)
        // (u1,1): level-1 arm gets a control user -> (0, 0)
        // (u0,1): treated user -> cost 1 - 0*1/1 = 1, revenue 2 - 0.5 = 1.5
        // (u0,2): level-2 arm gets u0 as its lower level -> no treated, 0
        // (u1,2): u1 is at level 0, outside the pair -> unchanged
        let c = mt_aucc_curve(&tr, &tc, &obs).unwrap();
        assert_eq!(c.x, vec![0.0, 1.0]);
        assert_eq!(c.y, vec![0.0, 1.5]);
    }

    #[test]
    fn efficiency_keys() {
        assert_eq!(pair_efficiency(1.0, 0.0), f64::INFINITY);
        assert_eq!(pair_efficiency(0.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(pair_efficiency(1.0, 2.0), 0.5);
    }

    #[test]
    fn csv_output() {
        let mut out = Vec::new();
        write_curve_csv(&mut out, &CurvePoints { x: vec![0.0, 1.0], y: vec![0.0, 0.5] }).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x,y\n0,0\n1,0.5\n");
    }
}
