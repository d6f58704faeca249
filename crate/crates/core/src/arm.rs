//! Membership features for autoregressive token models.
//!
//! Every function here reads only an [`ArmTrace`]. The raw statistics keep
//! their textbook orientation (a loss is a loss); [`arm_feature_matrix`]
//! flips signs so that every emitted column grows with membership.

use crate::config::AttackConfig;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::stats::{self, ls_slope, percentile};
use crate::trace::ArmTrace;

/// Embedding dimension of the approximate-entropy templates.
pub const APEN_M: usize = 2;
/// Approximate-entropy tolerance as a multiple of the series' standard deviation.
pub const APEN_R_FACTOR: f64 = 0.2;

fn nll_series(trace: &ArmTrace) -> Vec<f64> {
    trace.steps.iter().map(|s| -s.logp_true).collect()
}

fn count_for_percent(n: usize, k: u32) -> usize {
    (k as usize * n).div_ceil(100).clamp(1, n)
}

/// Mean of the ceil(k% * n) smallest values; ties keep positional order.
pub fn bottom_k_mean(values: &[f64], k: u32) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let take = count_for_percent(values.len(), k);
    order[..take].iter().map(|&i| values[i]).sum::<f64>() / take as f64
}

/// Mean negative log-likelihood of the sample.
pub fn loss_feature(trace: &ArmTrace) -> f64 {
    stats::mean(&nll_series(trace))
}

/// Perplexity divided by the zlib-compressed size of the sample.
pub fn zlib_ratio(trace: &ArmTrace) -> f64 {
    loss_feature(trace).exp() / trace.zlib_size as f64
}

/// Mean margin between the true-token logit and the best competing logit.
pub fn hinge_feature(trace: &ArmTrace) -> f64 {
    let margins: Vec<f64> = trace
        .steps
        .iter()
        .map(|s| s.logit_true - s.max_other_logit)
        .collect();
    stats::mean(&margins)
}

/// Mean log-probability of the K% least likely true tokens.
pub fn min_k(trace: &ArmTrace, k: u32) -> f64 {
    let logps: Vec<f64> = trace.steps.iter().map(|s| s.logp_true).collect();
    bottom_k_mean(&logps, k)
}

/// Min-K%++ scores per position: the true-token log-probability
/// standardized by the vocabulary's log-probability moments.
pub fn min_k_pp_scores(trace: &ArmTrace) -> Vec<f64> {
    trace
        .steps
        .iter()
        .map(|s| (s.logp_true - s.mu_vocab) / s.sigma_vocab)
        .collect()
}

/// Mean standardized score over the K% positions with the lowest standardized score.
pub fn min_k_pp(trace: &ArmTrace, k: u32) -> f64 {
    bottom_k_mean(&min_k_pp_scores(trace), k)
}

/// SURP score for an explicit probability cutoff `tau`.
///
/// Averages the true-token probability over positions that are confident
/// (entropy below `entropy_threshold`) yet surprised (probability below
/// `tau`). `None` when no position qualifies.
pub fn surp_with_tau(trace: &ArmTrace, tau: f64, entropy_threshold: f64) -> Option<f64> {
    let picked: Vec<f64> = trace
        .steps
        .iter()
        .filter_map(|s| {
            let p = s.logp_true.exp();
            (s.entropy < entropy_threshold && p < tau).then_some(p)
        })
        .collect();
    (!picked.is_empty()).then(|| stats::mean(&picked))
}

/// SURP with the cutoff set to the k-th percentile of the sample's own
/// true-token probabilities.
pub fn surp(trace: &ArmTrace, k: u32, entropy_threshold: f64) -> Option<f64> {
    let probs: Vec<f64> = trace.steps.iter().map(|s| s.logp_true.exp()).collect();
    let tau = percentile(&probs, k).ok()?;
    surp_with_tau(trace, tau, entropy_threshold)
}

fn mean_probability(trace: &ArmTrace) -> f64 {
    trace.steps.iter().map(|s| s.logp_true.exp()).sum::<f64>() / trace.steps.len() as f64
}

/// Approximate entropy ApEn(m, r) with r = `r_factor` * population std.
///
/// Self-matches are counted. Series too short for two template lengths, and
/// the small negative values ApEn can take on very short series, map to 0.
pub fn approximate_entropy(series: &[f64], m: usize, r_factor: f64) -> f64 {
    let n = series.len();
    if n < m + 2 {
        return 0.0;
    }
    let r = r_factor * stats::population_std(series);
    let phi = |len: usize| -> f64 {
        let windows = n - len + 1;
        let total: f64 = (0..windows)
            .map(|i| {
                let close = (0..windows)
                    .filter(|&j| (0..len).all(|k| (series[i + k] - series[j + k]).abs() <= r))
                    .count();
                (close as f64 / windows as f64).ln()
            })
            .sum();
        total / windows as f64
    };
    (phi(m) - phi(m + 1)).max(0.0)
}

/// Binarizes at the median: 1 strictly above, 0 otherwise.
pub fn binarize_at_median(series: &[f64]) -> Vec<bool> {
    let mut s = series.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    series.iter().map(|&x| x > median).collect()
}

/// Lempel–Ziv (1976) phrase count, Kaspar–Schuster scan.
pub fn lz76_complexity(bits: &[bool]) -> usize {
    let n = bits.len();
    if n < 2 {
        return n;
    }
    let (mut i, mut k, mut l) = (0usize, 1usize, 1usize);
    let mut k_max = 1usize;
    let mut c = 1usize;
    loop {
        if bits[i + k - 1] == bits[l + k - 1] {
            k += 1;
            if l + k > n {
                c += 1;
                break;
            }
        } else {
            k_max = k_max.max(k);
            i += 1;
            if i == l {
                c += 1;
                l += k_max;
                if l + 1 > n {
                    break;
                }
                i = 0;
                k = 1;
                k_max = 1;
            } else {
                k = 1;
            }
        }
    }
    c
}

/// First-pass minus second-pass mean loss on the input repeated twice.
pub fn repetition_amplification(trace: &ArmTrace) -> Result<f64> {
    let rep = trace
        .repeated_losses
        .as_ref()
        .ok_or_else(|| Error::MissingRepeatedPass(trace.sample_id.clone()))?;
    let half = rep.len() / 2;
    Ok(stats::mean(&rep[..half]) - stats::mean(&rep[half..]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamiaFeatures {
    pub slope: f64,
    pub apen: f64,
    pub lz: f64,
    pub count_below: f64,
    pub rep_amp: Option<f64>,
}

/// Temporal descriptors of the per-token loss sequence.
pub fn camia_features(trace: &ArmTrace, cutoff: f64) -> CamiaFeatures {
    let nll = nll_series(trace);
    let slope = if nll.len() >= 2 { ls_slope(&nll).unwrap_or(0.0) } else { 0.0 };
    CamiaFeatures {
        slope,
        apen: approximate_entropy(&nll, APEN_M, APEN_R_FACTOR),
        lz: lz76_complexity(&binarize_at_median(&nll)) as f64,
        count_below: nll.iter().filter(|&&l| l < cutoff).count() as f64 / nll.len() as f64,
        rep_amp: repetition_amplification(trace).ok(),
    }
}

/// Per-position guidance difference p(x_t | c) - p(x_t | null).
pub fn cfg_delta_series(trace: &ArmTrace) -> Result<Vec<f64>> {
    trace
        .steps
        .iter()
        .map(|s| {
            s.logp_true_uncond
                .map(|u| s.logp_true.exp() - u.exp())
                .ok_or_else(|| Error::MissingUnconditional(trace.sample_id.clone()))
        })
        .collect()
}

/// Mean guidance difference over positions.
pub fn cfg_delta(trace: &ArmTrace) -> Result<f64> {
    Ok(stats::mean(&cfg_delta_series(trace)?))
}

/// All autoregressive features of one trace, in raw orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmFeatureRow {
    pub loss: f64,
    pub zlib_ratio: f64,
    pub hinge: f64,
    pub min_k: Vec<(u32, f64)>,
    pub min_k_pp: Vec<(u32, f64)>,
    /// ((k, entropy threshold), score); empty surprising sets fall back to the mean probability.
    pub surp: Vec<((u32, f64), f64)>,
    pub camia: CamiaFeatures,
    pub delta_cfg: Option<f64>,
    pub delta_min_k: Option<Vec<(u32, f64)>>,
}

pub fn arm_feature_row(trace: &ArmTrace, config: &AttackConfig) -> ArmFeatureRow {
    let fallback = mean_probability(trace);
    let surp = config
        .k_grid
        .iter()
        .flat_map(|&k| config.entropy_grid.iter().map(move |&e| (k, e)))
        .map(|(k, e)| ((k, e), surp(trace, k, e).unwrap_or(fallback)))
        .collect();
    let delta = cfg_delta_series(trace).ok();
    ArmFeatureRow {
        loss: loss_feature(trace),
        zlib_ratio: zlib_ratio(trace),
        hinge: hinge_feature(trace),
        min_k: config.k_grid.iter().map(|&k| (k, min_k(trace, k))).collect(),
        min_k_pp: config.k_grid.iter().map(|&k| (k, min_k_pp(trace, k))).collect(),
        surp,
        camia: camia_features(trace, config.count_below_cutoff),
        delta_cfg: delta.as_ref().map(|d| stats::mean(d)),
        delta_min_k: delta
            .as_ref()
            .map(|d| config.k_grid.iter().map(|&k| (k, bottom_k_mean(d, k))).collect()),
    }
}

/// Column names of the autoregressive feature matrix, in emission order.
pub fn arm_feature_names(config: &AttackConfig, with_rep_amp: bool, with_delta: bool) -> Vec<String> {
    let mut names = vec!["loss".to_string(), "zlib".to_string(), "hinge".to_string()];
    names.extend(config.k_grid.iter().map(|k| format!("min_k@{k}")));
    names.extend(config.k_grid.iter().map(|k| format!("min_k_pp@{k}")));
    for k in &config.k_grid {
        for e in &config.entropy_grid {
            names.push(format!("surp@{k}/{e}"));
        }
    }
    names.extend(
        ["camia_slope", "camia_apen", "camia_lz", "camia_count_below"]
            .iter()
            .map(|s| s.to_string()),
    );
    if with_rep_amp {
        names.push("camia_rep_amp".into());
    }
    if with_delta {
        names.push("cfg_delta".into());
        names.extend(config.k_grid.iter().map(|k| format!("cfg_delta_min_k@{k}")));
    }
    names
}

/// One row per trace; every column oriented so that larger means more member-like.
///
/// Repetition amplification and the guidance-difference block are emitted
/// only when every trace carries the data they need.
pub fn arm_feature_matrix(traces: &[ArmTrace], config: &AttackConfig) -> Result<FeatureMatrix> {
    if traces.is_empty() {
        return Err(Error::EmptyInput);
    }
    config.validate()?;
    let with_rep = traces.iter().all(|t| t.repeated_losses.is_some());
    let with_delta = traces.iter().all(ArmTrace::has_unconditional);
    let mut matrix = FeatureMatrix::new(arm_feature_names(config, with_rep, with_delta));
    for trace in traces {
        trace.validate()?;
        let row = arm_feature_row(trace, config);
        let mut values = vec![-row.loss, -row.zlib_ratio, row.hinge];
        values.extend(row.min_k.iter().map(|(_, v)| v));
        values.extend(row.min_k_pp.iter().map(|(_, v)| v));
        values.extend(row.surp.iter().map(|(_, v)| v));
        // members: faster-declining, more regular, lower losses, smaller repetition gains
        values.extend([
            -row.camia.slope,
            -row.camia.apen,
            -row.camia.lz,
            row.camia.count_below,
        ]);
        if with_rep {
            values.push(-row.camia.rep_amp.expect("checked above"));
        }
        if with_delta {
            values.push(row.delta_cfg.expect("checked above"));
            values.extend(row.delta_min_k.expect("checked above").iter().map(|(_, v)| v));
        }
        matrix.push_row(&trace.sample_id, values)?;
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::ArmStep;
    use approx::assert_abs_diff_eq;

    fn step(lp: f64) -> ArmStep {
        ArmStep {
            logp_true: lp,
            logp_true_uncond: None,
            entropy: 1.0,
            mu_vocab: 0.0,
            sigma_vocab: 1.0,
            logit_true: 0.0,
            max_other_logit: 0.0,
        }
    }

    fn trace(logps: &[f64]) -> ArmTrace {
        ArmTrace {
            sample_id: "x".into(),
            condition_id: None,
            zlib_size: 10,
            steps: logps.iter().map(|&l| step(l)).collect(),
            repeated_losses: None,
        }
    }

    #[test]
    fn loss_examples() {
        assert_abs_diff_eq!(loss_feature(&trace(&[-1.0, -2.0, -3.0])), 2.0);
        assert_abs_diff_eq!(loss_feature(&trace(&[-0.5])), 0.5);
        assert_eq!(loss_feature(&trace(&[0.0, 0.0])), 0.0);
    }

    #[test]
    fn zlib_examples() {
        let mut t = trace(&[0.0]);
        t.zlib_size = 100;
        assert_abs_diff_eq!(zlib_ratio(&t), 0.01);
        let mut t = trace(&[-(4f64.ln())]);
        t.zlib_size = 2;
        assert_abs_diff_eq!(zlib_ratio(&t), 2.0, epsilon = 1e-12);
        let mut t = trace(&[-1.0, -3.0]);
        t.zlib_size = 50;
        assert_abs_diff_eq!(zlib_ratio(&t), 2f64.exp() / 50.0, epsilon = 1e-15);
    }

    #[test]
    fn hinge_examples() {
        let mut t = trace(&[-1.0, -1.0]);
        for s in &mut t.steps {
            s.logit_true = 5.0;
            s.max_other_logit = 3.0;
        }
        assert_eq!(hinge_feature(&t), 2.0);
        let mut t = trace(&[-1.0, -1.0, -1.0]);
        for (s, m) in t.steps.iter_mut().zip([1.0, -1.0, 2.0]) {
            s.logit_true = m;
        }
        assert_abs_diff_eq!(hinge_feature(&t), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn min_k_examples() {
        let t = trace(&[-1.0, -2.0, -3.0, -4.0]);
        assert_eq!(min_k(&t, 50), -3.5);
        assert_eq!(min_k(&t, 100), -loss_feature(&t));
        assert_eq!(min_k(&trace(&[-0.7]), 10), -0.7);
    }

    #[test]
    fn min_k_pp_examples() {
        assert_eq!(min_k_pp(&trace(&[-1.0, -2.0]), 50), -2.0);
        let mut t = trace(&[-1.0, -4.0]);
        t.steps[0].mu_vocab = -2.0;
        t.steps[1].mu_vocab = -2.0;
        t.steps[1].sigma_vocab = 2.0;
        assert_eq!(min_k_pp(&t, 50), -1.0);
        let mut t = trace(&[-1.0, -3.0, -5.0]);
        for (s, mu) in t.steps.iter_mut().zip([-2.0, -4.0, -6.0]) {
            s.mu_vocab = mu;
        }
        for k in [10, 50, 100] {
            assert_eq!(min_k_pp(&t, k), 1.0);
        }
    }

    #[test]
    fn surp_examples() {
        let mut t = trace(&[0.05f64.ln(), 0.5f64.ln(), 0.01f64.ln()]);
        for (s, h) in t.steps.iter_mut().zip([1.0, 1.0, 3.0]) {
            s.entropy = h;
        }
        assert_abs_diff_eq!(surp_with_tau(&t, 0.1, 2.0).unwrap(), 0.05, epsilon = 1e-15);
        // nothing is confident enough
        assert_eq!(surp_with_tau(&t, 0.1, 0.5), None);
        let cfg = AttackConfig { k_grid: vec![10], entropy_grid: vec![0.5], ..Default::default() };
        let row = arm_feature_row(&t, &cfg);
        assert_abs_diff_eq!(row.surp[0].1, (0.05 + 0.5 + 0.01) / 3.0, epsilon = 1e-15);
        // every position qualifies
        assert_abs_diff_eq!(surp_with_tau(&t, 1.0, 10.0).unwrap(), (0.05 + 0.5 + 0.01) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn camia_examples() {
        let c = camia_features(&trace(&[-1.5; 6]), 1.0);
        assert_eq!(c.slope, 0.0);
        assert_eq!(c.apen, 0.0);
        assert_eq!(c.lz, 2.0);
        assert_eq!(c.count_below, 0.0);
        assert_eq!(c.rep_amp, None);
        let c = camia_features(&trace(&[-0.5, -1.5, -2.5]), 2.0);
        assert_abs_diff_eq!(c.count_below, 2.0 / 3.0);
        assert_abs_diff_eq!(c.slope, 1.0, epsilon = 1e-15);
        let t = trace(&[-1.0]);
        assert_eq!(repetition_amplification(&t).unwrap_err(), Error::MissingRepeatedPass("x".into()));
    }

    #[test]
    fn lz_examples() {
        let zeros = [false; 10];
        assert_eq!(lz76_complexity(&zeros), 2);
        let alt: Vec<bool> = (0..10).map(|i| i % 2 == 1).collect();
        assert_eq!(lz76_complexity(&alt), 3);
        assert_eq!(lz76_complexity(&[true]), 1);
        // classic example: 0001101001000101 parses as 0|001|10|100|1000|101
        let s: Vec<bool> = "0001101001000101".chars().map(|c| c == '1').collect();
        assert_eq!(lz76_complexity(&s), 6);
    }

    #[test]
    fn repetition_amplification_sign() {
        let mut t = trace(&[-1.0, -1.0]);
        t.repeated_losses = Some(vec![2.0, 1.0, 0.5, 0.5]);
        assert_eq!(repetition_amplification(&t).unwrap(), 1.0);
    }

    #[test]
    fn cfg_delta_examples() {
        let mut t = trace(&[0.9f64.ln()]);
        t.steps[0].logp_true_uncond = Some(0.5f64.ln());
        assert_abs_diff_eq!(cfg_delta(&t).unwrap(), 0.4, epsilon = 1e-15);
        let mut t = trace(&[-0.3, -0.2]);
        for s in &mut t.steps {
            s.logp_true_uncond = Some(s.logp_true);
        }
        assert_eq!(cfg_delta(&t).unwrap(), 0.0);
        let mut t = trace(&[0.8f64.ln(), 0.6f64.ln()]);
        for s in &mut t.steps {
            s.logp_true_uncond = Some(0.2f64.ln());
        }
        assert_abs_diff_eq!(cfg_delta(&t).unwrap(), 0.5, epsilon = 1e-15);
        assert!(matches!(cfg_delta(&trace(&[-1.0])), Err(Error::MissingUnconditional(_))));
    }

    #[test]
    fn matrix_columns() {
        let cfg = AttackConfig::default();
        let mut a = trace(&[-1.0, -2.0, -0.5]);
        let mut b = a.clone();
        b.sample_id = "y".into();
        let m = arm_feature_matrix(&[a.clone(), b.clone()], &cfg).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.n_features(), 2 + 1 + 5 + 5 + 20 + 4);
        for t in [&mut a, &mut b] {
            for s in &mut t.steps {
                s.logp_true_uncond = Some(-1.0);
            }
        }
        let m = arm_feature_matrix(&[a, b], &cfg).unwrap();
        assert_eq!(m.n_features(), 37 + 6);
        assert!(m.feature_names().contains(&"cfg_delta".to_string()));
        assert_eq!(arm_feature_matrix(&[], &cfg).unwrap_err(), Error::EmptyInput);
    }
}
