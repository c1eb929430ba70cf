use super::{MetricError, Observation};

/// Self-normalized inverse-propensity estimate of the mean outcome had
/// every user received `policy[i]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EomEstimate {
    pub revenue: f64,
    pub cost: f64,
    /// Users whose observed treatment equals the policy's choice.
    pub matched: usize,
}

/// Propensities are the empirical treatment frequencies in `obs`.
pub fn eom(policy: &[usize], obs: &[Observation]) -> Result<EomEstimate, MetricError> {
    if policy.len() != obs.len() {
        return Err(MetricError::LengthMismatch(format!("{} choices for {} samples", policy.len(), obs.len())));
    }
    let levels = obs.iter().map(|o| o.treatment + 1).max().unwrap_or(0);
    let mut counts = vec![0usize; levels];
    for o in obs {
        counts[o.treatment] += 1;
    }
    let n = obs.len() as f64;
    let (mut w_sum, mut rev, mut cost, mut matched) = (0.0, 0.0, 0.0, 0);
    for (o, &p) in obs.iter().zip(policy) {
        if o.treatment != p {
            continue;
        }
        let w = n / counts[o.treatment] as f64;
        w_sum += w;
        rev += w * o.revenue;
        cost += w * o.cost;
        matched += 1;
    }
    if matched == 0 {
        return Err(MetricError::UnsupportedPolicy);
    }
    Ok(EomEstimate {
        revenue: rev / w_sum,
        cost: cost / w_sum,
        matched,
    })
}
