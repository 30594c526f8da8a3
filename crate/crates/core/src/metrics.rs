//! AUC and the two degradation measures comparing the two-posterior attack
//! with the single-posterior baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated sample: true membership `b`, the attack's confidence `p_u`
/// and the baseline's confidence `p_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub b: bool,
    pub p_u: f64,
    pub p_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc_ours: f64,
    pub auc_baseline: f64,
    pub deg_count: f64,
    pub deg_rate: f64,
    pub n: usize,
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half, via the rank-sum statistic with averaged ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&b| b).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, kept integral.
    let mut rank_sum2: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let doubled_rank = (start + end + 1) as u64;
        let hits = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        rank_sum2 += hits * doubled_rank;
        start = end;
    }
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

fn check_records(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no evaluation records".into()));
    }
    if let Some(r) = records
        .iter()
        .find(|r| !(0.0..=1.0).contains(&r.p_u) || !(0.0..=1.0).contains(&r.p_m))
    {
        return Err(Error::InvalidArgument(format!(
            "confidence outside [0, 1]: {r:?}"
        )));
    }
    Ok(())
}

/// Share of records where the attack is strictly more confident than the
/// baseline in the true membership status.
pub fn deg_count(records: &[EvalRecord]) -> Result<f64> {
    check_records(records)?;
    let wins = records
        .iter()
        .filter(|r| if r.b { r.p_u > r.p_m } else { r.p_u < r.p_m })
        .count();
    Ok(wins as f64 / records.len() as f64)
}

/// Mean signed confidence gain of the attack over the baseline on the true
/// membership status.
pub fn deg_rate(records: &[EvalRecord]) -> Result<f64> {
    check_records(records)?;
    let total: f64 = records
        .iter()
        .map(|r| if r.b { r.p_u - r.p_m } else { r.p_m - r.p_u })
        .sum();
    Ok(total / records.len() as f64)
}

pub fn evaluate(records: &[EvalRecord]) -> Result<MetricsReport> {
    check_records(records)?;
    let labels: Vec<bool> = records.iter().map(|r| r.b).collect();
    let ours: Vec<f64> = records.iter().map(|r| r.p_u).collect();
    let base: Vec<f64> = records.iter().map(|r| r.p_m).collect();
    Ok(MetricsReport {
        auc_ours: auc(&ours, &labels)?,
        auc_baseline: auc(&base, &labels)?,
        deg_count: deg_count(records)?,
        deg_rate: deg_rate(records)?,
        n: records.len(),
    })
}
