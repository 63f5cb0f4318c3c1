//! Node impurity criteria: Gini decrease, sum-of-squares decrease and the two-group log-rank statistic.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriterionError {
    #[error("child node is empty")]
    EmptyChild,
    #[error("child counts do not add up to the parent")]
    NotAPartition,
}

/// Gini impurity `1 - sum (n_c / n)^2` of a class histogram. Empty histogram → 0.
pub fn gini(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let sq: u128 = counts.iter().map(|&c| (c as u128) * (c as u128)).sum();
    1.0 - sq as f64 / ((n as u128 * n as u128) as f64)
}

/// Gini decrease of a split, evaluated as one exact integer ratio so that uninformative splits
/// give exactly 0 and the result is never negative.
pub(crate) fn gini_decrease_unchecked(left: &[u64], right: &[u64]) -> f64 {
    let (mut nl, mut nr) = (0u128, 0u128);
    let (mut sl, mut sr, mut sp) = (0u128, 0u128, 0u128);
    for (&l, &r) in left.iter().zip(right) {
        let (l, r) = (l as u128, r as u128);
        nl += l;
        nr += r;
        sl += l * l;
        sr += r * r;
        sp += (l + r) * (l + r);
    }
    let n = nl + nr;
    // decrease = (sl/nl + sr/nr - sp/n) / n, brought over the common denominator nl*nr*n*n.
    let num = (sl * nr * n + sr * nl * n) as i128 - (sp * nl * nr) as i128;
    let den = (nl * nr * n * n) as f64;
    (num.max(0) as f64) / den
}

/// `Gini(parent) - (n_L/n) Gini(left) - (n_R/n) Gini(right)`.
pub fn gini_decrease(parent: &[u64], left: &[u64], right: &[u64]) -> Result<f64, CriterionError> {
    if left.len() != parent.len()
        || right.len() != parent.len()
        || parent.iter().zip(left.iter().zip(right)).any(|(&p, (&l, &r))| p != l + r)
    {
        return Err(CriterionError::NotAPartition);
    }
    if left.iter().all(|&c| c == 0) || right.iter().all(|&c| c == 0) {
        return Err(CriterionError::EmptyChild);
    }
    Ok(gini_decrease_unchecked(left, right))
}

/// Sum of squared deviations from the mean (two-pass).
pub fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// `SSE(parent) - SSE(left) - SSE(right)` for a partition of the parent values.
pub fn sse_decrease(parent: &[f64], left: &[f64], right: &[f64]) -> Result<f64, CriterionError> {
    if left.is_empty() || right.is_empty() {
        return Err(CriterionError::EmptyChild);
    }
    if left.len() + right.len() != parent.len() {
        return Err(CriterionError::NotAPartition);
    }
    Ok(sse_decrease_from_sums(left.len() as f64, left.iter().sum(), right.len() as f64, right.iter().sum()))
}

/// Between-group sum of squares `n_L n_R / n (mean_L - mean_R)^2`, which equals the SSE decrease.
#[inline]
pub(crate) fn sse_decrease_from_sums(nl: f64, sum_l: f64, nr: f64, sum_r: f64) -> f64 {
    let diff = sum_l / nl - sum_r / nr;
    nl * nr / (nl + nr) * diff * diff
}

/// Two-group log-rank chi-square statistic: `(sum_t (d_Lt - E_Lt))^2 / sum_t V_t` over distinct event
/// times, with hypergeometric variance `V_t = d_t (Y_Lt/Y_t)(1 - Y_Lt/Y_t)(Y_t - d_t)/(Y_t - 1)`.
/// Returns 0 when there are no events or the variance vanishes.
pub fn logrank_statistic(
    left_times: &[f64],
    left_status: &[bool],
    right_times: &[f64],
    right_status: &[bool],
) -> Result<f64, CriterionError> {
    if left_times.is_empty() || right_times.is_empty() {
        return Err(CriterionError::EmptyChild);
    }
    let mut obs: Vec<(f64, bool, bool)> = left_times
        .iter()
        .zip(left_status)
        .map(|(&t, &s)| (t, s, true))
        .chain(right_times.iter().zip(right_status).map(|(&t, &s)| (t, s, false)))
        .collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(logrank_sorted(&obs))
}

/// Log-rank statistic over observations `(time, event, in_left)` sorted ascending by time.
pub(crate) fn logrank_sorted(obs: &[(f64, bool, bool)]) -> f64 {
    let mut at_risk = obs.len() as f64;
    let mut at_risk_left = obs.iter().filter(|o| o.2).count() as f64;
    let mut o_minus_e = 0.0;
    let mut var = 0.0;
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let (mut d, mut d_left, mut leaving, mut leaving_left) = (0.0, 0.0, 0.0, 0.0);
        while i < obs.len() && obs[i].0 == t {
            let (_, event, left) = obs[i];
            leaving += 1.0;
            if left {
                leaving_left += 1.0;
            }
            if event {
                d += 1.0;
                if left {
                    d_left += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            let frac = at_risk_left / at_risk;
            o_minus_e += d_left - d * frac;
            if at_risk > 1.0 {
                var += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0);
            }
        }
        at_risk -= leaving;
        at_risk_left -= leaving_left;
    }
    if var <= 0.0 {
        0.0
    } else {
        o_minus_e * o_minus_e / var
    }
}
