//! Statistical kernels: one-sided Welch test, Mann–Whitney AUC, empirical
//! TPR at a fixed FPR, nearest-rank percentiles and least-squares slopes.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t_stat: f64,
    pub dof: f64,
    /// Upper-tail probability: small when suspect scores are larger.
    pub p_value: f64,
    pub n_p: usize,
    pub n_u: usize,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Population standard deviation (two-pass).
pub(crate) fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Upper-tail probability P(T > t) of Student's t with `dof` degrees of freedom.
///
/// Evaluated through the regularized incomplete beta function
/// I_x(dof/2, 1/2) with x = dof / (dof + t^2); absolute error below 1e-12
/// over the tested range (checked against an arbitrary-precision quadrature).
pub fn student_t_upper_tail(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let x = dof / (dof + t * t);
    let half_tail = 0.5 * beta_reg(0.5 * dof, 0.5, x);
    if t >= 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// One-sided Welch test of H0: mean(P) <= mean(U).
pub fn welch_one_sided(p_scores: &[f64], u_scores: &[f64]) -> Result<TestResult> {
    let (n_p, n_u) = (p_scores.len(), u_scores.len());
    if n_p < 2 || n_u < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n_p.min(n_u) });
    }
    let (var_p, var_u) = (sample_variance(p_scores), sample_variance(u_scores));
    if var_p == 0.0 && var_u == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let (a, b) = (var_p / n_p as f64, var_u / n_u as f64);
    let se2 = a + b;
    let t_stat = (mean(p_scores) - mean(u_scores)) / se2.sqrt();
    let dof = se2 * se2 / (a * a / (n_p - 1) as f64 + b * b / (n_u - 1) as f64);
    let p_value = student_t_upper_tail(t_stat, dof).clamp(0.0, 1.0);
    Ok(TestResult { t_stat, dof, p_value, n_p, n_u })
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Area under the ROC curve: the fraction of (member, non-member) pairs
/// ranked correctly, with ties worth one half.
pub fn auc(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<f64> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let neg = sorted(nonmember_scores);
    // twice the Mann–Whitney U, kept integral
    let twice_u: u64 = member_scores
        .iter()
        .map(|&m| {
            let below = neg.partition_point(|&n| n < m) as u64;
            let not_above = neg.partition_point(|&n| n <= m) as u64;
            2 * below + (not_above - below)
        })
        .sum();
    let pairs = 2 * member_scores.len() as u64 * neg.len() as u64;
    Ok(twice_u as f64 / pairs as f64)
}

/// Empirical TPR at a false-positive budget, without interpolation.
///
/// The threshold is the smallest value with at most `fpr` of the
/// non-members strictly above it; the result is the fraction of members
/// strictly above that threshold.
pub fn tpr_at_fpr(member_scores: &[f64], nonmember_scores: &[f64], fpr: f64) -> Result<f64> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::InvalidConfig(format!("fpr must lie in (0, 1), got {fpr}")));
    }
    let n = nonmember_scores.len();
    // guard against 0.01 * 100 landing just below an integer
    let allowed = ((fpr * n as f64) + 1e-9).floor() as usize;
    if allowed >= n {
        return Ok(1.0);
    }
    let mut desc = sorted(nonmember_scores);
    desc.reverse();
    let threshold = desc[allowed];
    let hits = member_scores.iter().filter(|&&m| m > threshold).count();
    Ok(hits as f64 / member_scores.len() as f64)
}

/// Nearest-rank percentile: the ceil(k/100 * n)-th smallest value.
pub fn percentile(values: &[f64], k: u32) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(1..=100).contains(&k) {
        return Err(Error::InvalidConfig(format!("percentile must lie in [1, 100], got {k}")));
    }
    let n = values.len();
    let rank = (k as usize * n).div_ceil(100).max(1);
    Ok(sorted(values)[rank - 1])
}

/// Ordinary least-squares slope of `series` against its index.
pub fn ls_slope(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let x_mean = (n - 1) as f64 / 2.0;
    let y_mean = mean(series);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in series.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}
