use super::{check_binary, ranking, MetricError, ScoredSample};

#[derive(Clone, Debug, PartialEq)]
pub struct KendallResult {
    pub tau: f64,
    /// Mean predicted score and observed uplift of each kept bin.
    pub predicted: Vec<f64>,
    pub observed: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Tau-b between per-bin mean score and per-bin observed uplift, with
/// bins formed from the score ranking. Bins lacking a treated or control
/// sample are dropped with a warning.
pub fn kendall_bins(scored: &[ScoredSample], bins: usize) -> Result<KendallResult, MetricError> {
    check_binary(scored)?;
    let n = scored.len();
    if bins < 2 || n < bins {
        return Err(MetricError::TooFewSamples { n, bins });
    }
    let order = ranking(scored.iter().map(|s| s.score));
    let mut predicted = Vec::new();
    let mut observed = Vec::new();
    let mut warnings = Vec::new();
    for b in 0..bins {
        let members = &order[b * n / bins..(b + 1) * n / bins];
        let (mut nt, mut nc, mut yt, mut yc, mut s) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &i in members {
            let x = &scored[i];
            s += x.score;
            if x.treatment == 1 {
                nt += 1.0;
                yt += x.revenue;
            } else {
                nc += 1.0;
                yc += x.revenue;
            }
        }
        if nt == 0.0 || nc == 0.0 {
            warnings.push(format!("bin {b} dropped: no {} samples", if nt == 0.0 { "treated" } else { "control" }));
            continue;
        }
        predicted.push(s / members.len() as f64);
        observed.push(yt / nt - yc / nc);
    }
    if predicted.len() < 2 {
        return Err(MetricError::TooFewBins);
    }
    let tau = match kendall_tau_b(&predicted, &observed) {
        Some(t) => t,
        None => {
            warnings.push("all bins tied on one axis; tau set to 0".into());
            0.0
        }
    };
    Ok(KendallResult {
        tau,
        predicted,
        observed,
        warnings,
    })
}

/// `None` when either sequence is constant.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = (a[i] - a[j]).partial_cmp(&0.0)? as i64;
            let db = (b[i] - b[j]).partial_cmp(&0.0)? as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n_a = (concordant + discordant + ties_b) as f64;
    let n_b = (concordant + discordant + ties_a) as f64;
    if n_a == 0.0 || n_b == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / (n_a * n_b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ten bins of ten; bin `b` has uplift `10 - b` under a matching score.
    fn sorted_bins(reverse: bool) -> Vec<ScoredSample> {
        (0..100)
            .map(|i| {
                let b = i / 10;
                let uplift = if reverse { b as f64 } else { (10 - b) as f64 };
                let t = i % 2;
                ScoredSample {
                    score: (100 - i) as f64,
                    treatment: t,
                    cost: 0.0,
                    revenue: t as f64 * uplift,
                }
            })
            .collect()
    }

    #[test]
    fn sorted_and_reversed() {
        assert_eq!(kendall_bins(&sorted_bins(false), 10).unwrap().tau, 1.0);
        assert_eq!(kendall_bins(&sorted_bins(true), 10).unwrap().tau, -1.0);
    }

    #[test]
    fn single_group_bins_are_dropped() {
        let mut d = sorted_bins(false);
        for s in &mut d[..10] {
            s.treatment = 1;
        }
        let r = kendall_bins(&d, 10).unwrap();
        assert_eq!(r.predicted.len(), 9);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.tau, 1.0);
    }

    #[test]
    fn tau_b_with_ties() {
        // scipy.stats.kendalltau([1,2,2,3],[1,3,2,4]) = 0.9128709291752769
        let t = kendall_tau_b(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 0.912_870_929_175_276_9).abs() < 1e-15);
        assert_eq!(kendall_tau_b(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
