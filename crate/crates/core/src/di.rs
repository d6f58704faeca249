//! Dataset inference: scalar scoring, the partitioned Welch test, and the
//! minimal suspect-set size search.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng;
use crate::stats::{self, mean, sample_variance};
use crate::trace::Modality;

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const MIN_CONTROL_ROWS: usize = 10;
pub const MIN_SET_SIZE: usize = 4;
const DEFAULT_GRID: [usize; 8] = [4, 8, 16, 32, 64, 128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiConfig {
    pub alpha: f64,
    pub n_partitions: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub trials: usize,
    /// Candidate set sizes for the minimal-P search; empty means the default grid.
    pub grid: Vec<usize>,
}

impl Default for DiConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            n_partitions: 10,
            lambda: 1e-2,
            iterations: 500,
            learning_rate: 0.1,
            trials: 20,
            grid: Vec::new(),
        }
    }
}

impl DiConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.n_partitions == 0 || self.trials == 0 {
            return bad("partitions and trials must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("grid must be strictly ascending");
        }
        Ok(())
    }

    /// The configured grid (or the default one) clipped to [4, n], always ending at n.
    pub fn grid_for(&self, n: usize) -> Vec<usize> {
        let base: Vec<usize> = if self.grid.is_empty() { DEFAULT_GRID.to_vec() } else { self.grid.clone() };
        let mut g: Vec<usize> = base.into_iter().filter(|&k| (MIN_SET_SIZE..=n).contains(&k)).collect();
        if self.grid.is_empty() && g.last() != Some(&n) && n >= MIN_SET_SIZE {
            g.push(n);
        }
        g
    }
}

/// How feature rows become scalar scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// Sum of z-scored features; normalizer fit on the reference control half.
    Sum,
    /// Logistic regression fit on both control halves.
    Logistic,
}

impl From<Modality> for Scoring {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Arm => Scoring::Sum,
            Modality::Dm => Scoring::Logistic,
        }
    }
}

/// Column means and standard deviations; zero-variance columns are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Indices of columns kept.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl Normalizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let n_features = rows.first().ok_or(Error::EmptyInput)?.len();
        let mut means = Vec::with_capacity(n_features);
        let mut stds = Vec::with_capacity(n_features);
        let (mut kept, mut dropped) = (Vec::new(), Vec::new());
        for j in 0..n_features {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let m = mean(&col);
            let s = if col.len() > 1 { sample_variance(&col).sqrt() } else { 0.0 };
            if s > 0.0 && s.is_finite() {
                kept.push(j);
            } else {
                dropped.push(j);
            }
            means.push(m);
            stds.push(s);
        }
        if kept.is_empty() {
            return Err(Error::SingularFeatures);
        }
        Ok(Self { means, stds, kept, dropped })
    }

    /// z-scores of the kept columns.
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        self.kept.iter().map(|&j| (row[j] - self.means[j]) / self.stds[j]).collect()
    }
}

/// Sum of the z-scored kept columns.
pub fn sum_score(row: &[f64], normalizer: &Normalizer) -> f64 {
    normalizer.transform(row).iter().sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticScorer {
    pub normalizer: Normalizer,
    /// One weight per kept column.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Objective after each iteration.
    pub loss_history: Vec<f64>,
}

impl LogisticScorer {
    pub fn score(&self, row: &[f64]) -> f64 {
        let z = self.normalizer.transform(row);
        sigmoid(self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }
}

/// L2-regularized logistic regression by full-batch gradient descent.
///
/// Members (label 1) are `p_control`, references (label 0) are
/// `u_control`. The objective is mean log loss plus lambda/2 ||w||^2;
/// the bias is not penalized. Weights start at zero.
pub fn fit_logistic(
    p_control: &[&[f64]],
    u_control: &[&[f64]],
    lambda: f64,
    iterations: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<LogisticScorer> {
    for got in [p_control.len(), u_control.len()] {
        if got < MIN_CONTROL_ROWS {
            return Err(Error::TooFewSamples { needed: MIN_CONTROL_ROWS, got });
        }
    }
    let all: Vec<&[f64]> = p_control.iter().chain(u_control).copied().collect();
    let normalizer = Normalizer::fit(&all)?;
    let data: Vec<(Vec<f64>, f64)> = p_control
        .iter()
        .map(|r| (normalizer.transform(r), 1.0))
        .chain(u_control.iter().map(|r| (normalizer.transform(r), 0.0)))
        .collect();
    let n = data.len() as f64;
    let k = normalizer.kept.len();
    let mut w = vec![0.0; k];
    let mut b = 0.0;
    let mut loss_history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut gw: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
        let mut gb = 0.0;
        for (x, y) in &data {
            let p = sigmoid(b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
            let r = (p - y) / n;
            gb += r;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += r * xi);
        }
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= learning_rate * g);
        b -= learning_rate * gb;
        loss_history.push(logistic_objective(&data, &w, b, lambda));
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::SingularFeatures);
    }
    Ok(LogisticScorer { normalizer, weights: w, bias: b, lambda, iterations, seed, loss_history })
}

fn logistic_objective(data: &[(Vec<f64>, f64)], w: &[f64], b: f64, lambda: f64) -> f64 {
    let nll: f64 = data
        .iter()
        .map(|(x, y)| {
            let z = b + x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            // log(1 + e^z) - y z, computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - y * z
        })
        .sum();
    nll / data.len() as f64 + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionOutcome {
    pub p_value: f64,
    pub t_stat: f64,
    pub dof: f64,
    /// Columns dropped for zero variance on the control half.
    pub dropped_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiTestResult {
    pub partitions: Vec<PartitionOutcome>,
    pub mean_p: f64,
    pub rejected: bool,
    pub alpha: f64,
}

impl DiTestResult {
    pub fn p_values(&self) -> Vec<f64> {
        self.partitions.iter().map(|p| p.p_value).collect()
    }

    /// Columns dropped in any partition, sorted.
    pub fn dropped_columns(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&String> = self.partitions.iter().flat_map(|p| &p.dropped_columns).collect();
        set.into_iter().cloned().collect()
    }
}

fn check_sets(p: &FeatureMatrix, u: &FeatureMatrix) -> Result<()> {
    if p.feature_names() != u.feature_names() {
        return Err(Error::DimensionMismatch { expected: p.n_features(), got: u.n_features() });
    }
    if p.n_rows() != u.n_rows() {
        return Err(Error::UnequalSets { suspects: p.n_rows(), references: u.n_rows() });
    }
    if p.n_rows() < MIN_SET_SIZE {
        return Err(Error::TooFewSamples { needed: MIN_SET_SIZE, got: p.n_rows() });
    }
    Ok(())
}

/// One-sided Welch test with the degenerate case resolved by the mean difference.
///
/// When both held-out score sets are constant (a saturated scorer), the
/// test statistic is undefined; the p-value is then 0 if the suspect mean
/// is strictly larger and 1 otherwise.
fn welch_or_degenerate(p: &[f64], u: &[f64]) -> Result<(f64, f64, f64)> {
    match stats::welch_one_sided(p, u) {
        Ok(r) => Ok((r.p_value, r.t_stat, r.dof)),
        Err(Error::DegenerateVariance) => {
            let d = mean(p) - mean(u);
            let (pv, t) = if d > 0.0 { (0.0, f64::INFINITY) } else { (1.0, if d < 0.0 { f64::NEG_INFINITY } else { 0.0 }) };
            Ok((pv, t, (p.len() + u.len() - 2) as f64))
        }
        Err(e) => Err(e),
    }
}

/// Runs the partitioned test on a suspect set `p` and reference set `u`.
///
/// Partition k shuffles each set with its own seeded stream, uses the
/// first half as control (fitting the scorer) and the rest as held-out
/// (scored and tested).
pub fn di_test(p: &FeatureMatrix, u: &FeatureMatrix, scoring: Scoring, config: &DiConfig, seed: u64) -> Result<DiTestResult> {
    config.validate()?;
    check_sets(p, u)?;
    let n = p.n_rows();
    let n_control = n / 2;
    let mut partitions = Vec::with_capacity(config.n_partitions);
    for k in 0..config.n_partitions {
        let mut r = rng::split_indexed(seed, "di-partition", &[k as u64]);
        let mut p_idx: Vec<usize> = (0..n).collect();
        let mut u_idx: Vec<usize> = (0..n).collect();
        p_idx.shuffle(&mut r);
        u_idx.shuffle(&mut r);
        let (p_ctrl, p_held) = p_idx.split_at(n_control);
        let (u_ctrl, u_held) = u_idx.split_at(n_control);
        assert!(p_ctrl.iter().all(|i| !p_held.contains(i)) && u_ctrl.iter().all(|i| !u_held.contains(i)), "control and held-out overlap");

        let (pc, ph) = (p.take_rows(p_ctrl), p.take_rows(p_held));
        let (uc, uh) = (u.take_rows(u_ctrl), u.take_rows(u_held));
        let pc_ref: Vec<&[f64]> = pc.iter().map(|r| r.as_slice()).collect();
        let uc_ref: Vec<&[f64]> = uc.iter().map(|r| r.as_slice()).collect();

        let (p_scores, u_scores, dropped): (Vec<f64>, Vec<f64>, Vec<usize>) = match scoring {
            Scoring::Sum => {
                let norm = Normalizer::fit(&uc_ref)?;
                (
                    ph.iter().map(|r| sum_score(r, &norm)).collect(),
                    uh.iter().map(|r| sum_score(r, &norm)).collect(),
                    norm.dropped,
                )
            }
            Scoring::Logistic => {
                let scorer = fit_logistic(
                    &pc_ref,
                    &uc_ref,
                    config.lambda,
                    config.iterations,
                    config.learning_rate,
                    rng::substream_seed(seed, "di-scorer", &[k as u64]),
                )?;
                (
                    ph.iter().map(|r| scorer.score(r)).collect(),
                    uh.iter().map(|r| scorer.score(r)).collect(),
                    scorer.normalizer.dropped,
                )
            }
        };
        let (p_value, t_stat, dof) = welch_or_degenerate(&p_scores, &u_scores)?;
        partitions.push(PartitionOutcome {
            p_value,
            t_stat,
            dof,
            dropped_columns: dropped.iter().map(|&j| p.feature_names()[j].clone()).collect(),
        });
    }
    let mean_p = partitions.iter().map(|o| o.p_value).sum::<f64>() / partitions.len() as f64;
    Ok(DiTestResult { partitions, mean_p, rejected: mean_p <= config.alpha, alpha: config.alpha })
}

/// Mean over trials of the per-trial mean p at one candidate size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    /// None when the test could not run at this size (too few control rows).
    pub mean_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalPOutcome {
    pub minimal_p: Option<usize>,
    pub curve: Vec<GridPoint>,
}

/// Smallest grid size whose trial-averaged mean p is at most alpha.
///
/// Trial j at size n draws n suspects and n references without
/// replacement from stream (seed, n, j). Sizes too small for the scorer
/// count as not reached. The search stops at the first size that rejects.
pub fn minimal_p_search(p: &FeatureMatrix, u: &FeatureMatrix, scoring: Scoring, config: &DiConfig, seed: u64) -> Result<MinimalPOutcome> {
    config.validate()?;
    check_sets(p, u)?;
    let n_total = p.n_rows();
    if config.grid.last().is_some_and(|&g| g > n_total) {
        return Err(Error::InvalidConfig(format!("grid exceeds the set size {n_total}")));
    }
    let mut curve = Vec::new();
    for n in config.grid_for(n_total) {
        let mut total = 0.0;
        let mut feasible = true;
        for j in 0..config.trials {
            let mut r = rng::split_indexed(seed, "min-p-trial", &[n as u64, j as u64]);
            let pi = index::sample(&mut r, n_total, n).into_vec();
            let ui = index::sample(&mut r, n_total, n).into_vec();
            let sub = |m: &FeatureMatrix, idx: &[usize]| -> Result<FeatureMatrix> {
                let ids: Vec<&str> = idx.iter().map(|&i| m.ids()[i].as_str()).collect();
                m.select(&ids)
            };
            let trial_seed = rng::substream_seed(seed, "min-p-di", &[n as u64, j as u64]);
            match di_test(&sub(p, &pi)?, &sub(u, &ui)?, scoring, config, trial_seed) {
                Ok(res) => total += res.mean_p,
                Err(Error::TooFewSamples { .. }) => {
                    feasible = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let mean_p = feasible.then(|| total / config.trials as f64);
        curve.push(GridPoint { n, mean_p });
        if mean_p.is_some_and(|m| m <= config.alpha) {
            return Ok(MinimalPOutcome { minimal_p: Some(n), curve });
        }
    }
    Ok(MinimalPOutcome { minimal_p: None, curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub auc: f64,
    pub tpr_at_1pct: f64,
}

/// Per-column AUC and TPR at 1% FPR, suspects as positives.
///
/// Columns named `prefix@param` also yield `prefix@best`, holding the best
/// AUC and the best TPR over that sweep (each maximized separately).
pub fn mia_eval(p: &FeatureMatrix, u: &FeatureMatrix) -> Result<BTreeMap<String, AttackMetrics>> {
    if p.n_rows() == 0 || u.n_rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if p.feature_names() != u.feature_names() {
        return Err(Error::DimensionMismatch { expected: p.n_features(), got: u.n_features() });
    }
    let mut out = BTreeMap::new();
    let mut best: BTreeMap<String, AttackMetrics> = BTreeMap::new();
    for (j, name) in p.feature_names().iter().enumerate() {
        let (pc, uc) = (p.column(j), u.column(j));
        let m = AttackMetrics { auc: stats::auc(&pc, &uc)?, tpr_at_1pct: stats::tpr_at_fpr(&pc, &uc, 0.01)? };
        if let Some((prefix, _)) = name.split_once('@') {
            let e = best.entry(format!("{prefix}@best")).or_insert(m);
            e.auc = e.auc.max(m.auc);
            e.tpr_at_1pct = e.tpr_at_1pct.max(m.tpr_at_1pct);
        }
        out.insert(name.clone(), m);
    }
    out.extend(best);
    Ok(out)
}

/// Full verdict as written to the report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiVerdict {
    pub mean_p: f64,
    pub rejected: bool,
    pub alpha: f64,
    #[serde(rename = "minimal_P")]
    pub minimal_p: Option<usize>,
    pub partitions: Vec<f64>,
    pub attacks: BTreeMap<String, AttackMetrics>,
    pub modality: Modality,
    pub n_suspects: usize,
    pub n_references: usize,
    pub seed: u64,
    /// Trial-averaged mean p at each grid size searched.
    pub minimal_p_curve: Vec<GridPoint>,
    /// Zero-variance columns dropped by the scorer in any partition.
    pub dropped_columns: Vec<String>,
    pub config: DiConfig,
}

impl DiVerdict {
    pub fn summary_line(&self) -> String {
        if self.rejected {
            format!("REJECT H0 (p={:.3e})", self.mean_p)
        } else {
            "INCONCLUSIVE".to_string()
        }
    }
}

/// Test, minimal-P search and per-attack metrics in one call.
pub fn audit(p: &FeatureMatrix, u: &FeatureMatrix, modality: Modality, config: &DiConfig, seed: u64) -> Result<DiVerdict> {
    let scoring = Scoring::from(modality);
    let test = di_test(p, u, scoring, config, seed)?;
    let search = minimal_p_search(p, u, scoring, config, rng::substream_seed(seed, "min-p", &[]))?;
    Ok(DiVerdict {
        mean_p: test.mean_p,
        rejected: test.rejected,
        alpha: config.alpha,
        minimal_p: search.minimal_p,
        partitions: test.p_values(),
        attacks: mia_eval(p, u)?,
        modality,
        n_suspects: p.n_rows(),
        n_references: u.n_rows(),
        seed,
        minimal_p_curve: search.curve,
        dropped_columns: test.dropped_columns(),
        config: config.clone(),
    })
}
