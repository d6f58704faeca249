//! Membership features for denoising diffusion models.
//!
//! Features are either read from precomputed [`DmTrace`] records or
//! computed live against any [`Denoiser`]. The live path produces a
//! `DmTrace` first, so both routes share one feature assembler.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::AttackConfig;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::lbfgs::{self, LbfgsOptions};
use crate::rng;
use crate::trace::DmTrace;

/// Timesteps of the proximal-initialization probes.
pub const PIA_CLEAN_T: u32 = 0;
pub const PIA_NOISED_T: u32 = 200;
/// Guard for ratios and standardization.
pub const GUARD: f64 = 1e-12;

/// Signal fractions alpha_t, t = 0..=T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    alphas: Vec<f64>,
}

impl Schedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("schedule: {m}")));
        if alphas.len() < 2 {
            return bad("needs at least two timesteps");
        }
        if alphas[0] != 1.0 || *alphas.last().unwrap() != 0.0 {
            return bad("alpha_0 must be 1 and alpha_T must be 0");
        }
        if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alphas must lie in [0, 1]");
        }
        if alphas.windows(2).any(|w| w[1] > w[0]) {
            return bad("alphas must be non-increasing");
        }
        Ok(Self { alphas })
    }

    /// alpha_t = 1 - t / T.
    pub fn linear(t_max: u32) -> Self {
        let mut alphas: Vec<f64> = (0..=t_max)
            .map(|t| (1.0 - t as f64 / t_max as f64).clamp(0.0, 1.0))
            .collect();
        alphas[0] = 1.0;
        alphas[t_max as usize] = 0.0;
        Self { alphas }
    }

    pub fn t_max(&self) -> u32 {
        (self.alphas.len() - 1) as u32
    }

    pub fn alpha(&self, t: u32) -> f64 {
        self.alphas[t as usize]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// A noise-prediction network f(z_t, t).
///
/// Implementations are read-only during attacks; the toy model is `Sync`
/// and can be shared across threads without cloning.
pub trait Denoiser {
    fn dim(&self) -> usize;

    fn schedule(&self) -> &Schedule;

    fn predict(&self, z_t: &[f64], t: u32) -> Vec<f64>;

    /// Gradient of ||eps - f(z_t, t)||^2 with respect to `z_t`.
    fn loss_input_gradient(&self, _z_t: &[f64], _t: u32, _eps: &[f64]) -> Result<Vec<f64>> {
        Err(Error::GradientUnavailable)
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_t(sched: &Schedule, t: u32) -> Result<()> {
    if t > sched.t_max() {
        return Err(Error::InvalidConfig(format!(
            "timestep {t} outside [0, {}]",
            sched.t_max()
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Forward diffusion: sqrt(alpha_t) x + sqrt(1 - alpha_t) eps.
pub fn add_noise(x: &[f64], t: u32, eps: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    check_dim(x.len(), eps.len())?;
    check_t(sched, t)?;
    let a = sched.alpha(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x.iter().zip(eps).map(|(xi, ei)| sa * xi + sn * ei).collect())
}

/// ||eps - f(x_t, t)||^2.
pub fn denoising_loss<M: Denoiser + ?Sized>(model: &M, x: &[f64], t: u32, eps: &[f64]) -> Result<f64> {
    check_dim(model.dim(), x.len())?;
    let x_t = add_noise(x, t, eps, model.schedule())?;
    Ok(sq_dist(eps, &model.predict(&x_t, t)))
}

/// Deterministic Gaussian noise keyed by (seed, sample index, timestep, draw).
///
/// The same key yields the same draw for every sample set, so members and
/// non-members at equal positions see identical noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseDraws {
    pub seed: u64,
    pub sample_index: u64,
}

impl NoiseDraws {
    pub fn new(seed: u64, sample_index: u64) -> Self {
        Self { seed, sample_index }
    }

    pub fn at(&self, t: u32, draw: usize, dim: usize) -> Vec<f64> {
        let mut r = rng::split_indexed(self.seed, "dm-noise", &[self.sample_index, t as u64, draw as u64]);
        (0..dim).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    /// A draw reserved for one probe (e.g. the proximal-initialization pair).
    pub fn named(&self, label: &str, dim: usize) -> Vec<f64> {
        let mut r = rng::split_indexed(self.seed, label, &[self.sample_index]);
        (0..dim).map(|_| StandardNormal.sample(&mut r)).collect()
    }
}

/// Denoising loss at `t` averaged over `n_noise` seeded draws.
pub fn mean_denoising_loss<M: Denoiser + ?Sized>(
    model: &M,
    x: &[f64],
    t: u32,
    noise: &NoiseDraws,
    n_noise: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for draw in 0..n_noise {
        total += denoising_loss(model, x, t, &noise.at(t, draw, x.len()))?;
    }
    Ok(total / n_noise as f64)
}

/// Sum of the denoising losses over `grid`, one seeded draw per timestep.
pub fn multiple_loss<M: Denoiser + ?Sized>(model: &M, x: &[f64], grid: &[u32], noise: &NoiseDraws) -> Result<f64> {
    grid.iter()
        .map(|&t| denoising_loss(model, x, t, &noise.at(t, 0, x.len())))
        .sum()
}

/// Errors at the clean and the moderately noised probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePair {
    pub clean: f64,
    pub noised: f64,
}

impl ProbePair {
    pub fn difference(&self) -> f64 {
        self.noised - self.clean
    }

    pub fn ratio(&self) -> f64 {
        self.noised / (self.clean + GUARD)
    }
}

/// Proximal-initialization errors at t = 0 and t = 200 under one shared noise draw.
pub fn pia_features<M: Denoiser + ?Sized>(model: &M, x: &[f64], eps: &[f64]) -> Result<ProbePair> {
    Ok(ProbePair {
        clean: denoising_loss(model, x, PIA_CLEAN_T, eps)?,
        noised: denoising_loss(model, x, PIA_NOISED_T, eps)?,
    })
}

/// Subtracts the mean and divides by the (guarded) population standard deviation.
pub fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt().max(GUARD);
    v.iter().map(|x| (x - m) / sd).collect()
}

fn normalized_error<M: Denoiser + ?Sized>(model: &M, x: &[f64], t: u32, eps: &[f64]) -> Result<f64> {
    let x_t = add_noise(x, t, eps, model.schedule())?;
    Ok(sq_dist(eps, &standardize(&model.predict(&x_t, t))))
}

/// As [`pia_features`], with the predicted noise standardized per sample first.
pub fn pian_features<M: Denoiser + ?Sized>(model: &M, x: &[f64], eps: &[f64]) -> Result<ProbePair> {
    if x.len() < 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x.len() });
    }
    check_dim(model.dim(), x.len())?;
    Ok(ProbePair {
        clean: normalized_error(model, x, PIA_CLEAN_T, eps)?,
        noised: normalized_error(model, x, PIA_NOISED_T, eps)?,
    })
}

/// Indices of the ceil(fraction * d) largest magnitudes; ties go to the lower index.
pub fn top_fraction_mask(magnitudes: &[f64], fraction: f64) -> Vec<bool> {
    let d = magnitudes.len();
    let k = ((fraction * d as f64 - 1e-9).ceil() as usize).clamp(1, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| magnitudes[b].total_cmp(&magnitudes[a]));
    let mut mask = vec![false; d];
    for &i in &order[..k] {
        mask[i] = true;
    }
    mask
}

/// Reconstruction error restricted to the coordinates with the largest loss gradient.
///
/// `z` is the clean sample; it is noised to `t` with `eps`, the top
/// `fraction` of |grad| coordinates are replaced by `eps`, and the error
/// ||(eps - z_t) M - f(z_hat, t) M||^2 is returned.
pub fn gradient_mask_feature<M: Denoiser + ?Sized>(
    model: &M,
    z: &[f64],
    t: u32,
    eps: &[f64],
    fraction: f64,
) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig("mask fraction must lie in (0, 1)".into()));
    }
    check_dim(model.dim(), z.len())?;
    let z_t = add_noise(z, t, eps, model.schedule())?;
    let grad = model.loss_input_gradient(&z_t, t, eps)?;
    let magnitude: Vec<f64> = grad.iter().map(|g| g.abs()).collect();
    let mask = top_fraction_mask(&magnitude, fraction);
    let z_hat: Vec<f64> = (0..z.len()).map(|i| if mask[i] { eps[i] } else { z_t[i] }).collect();
    let pred = model.predict(&z_hat, t);
    Ok((0..z.len())
        .filter(|&i| mask[i])
        .map(|i| {
            let r = (eps[i] - z_t[i]) - pred[i];
            r * r
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseOptOutcome {
    pub initial_error: f64,
    pub final_error: f64,
    /// ||delta||^2
    pub delta_norm: f64,
    pub line_search_failed: bool,
}

/// Minimizes ||eps - f(z_t + delta, t)||^2 over delta with `steps` L-BFGS
/// iterations starting at delta = 0.
pub fn noise_opt_features<M: Denoiser + ?Sized>(
    model: &M,
    z: &[f64],
    t: u32,
    eps: &[f64],
    steps: usize,
) -> Result<NoiseOptOutcome> {
    if steps == 0 {
        return Err(Error::InvalidConfig("noise optimization needs at least one step".into()));
    }
    check_dim(model.dim(), z.len())?;
    let z_t = add_noise(z, t, eps, model.schedule())?;
    let objective = |delta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let shifted: Vec<f64> = z_t.iter().zip(delta).map(|(a, b)| a + b).collect();
        let value = sq_dist(eps, &model.predict(&shifted, t));
        let grad = model.loss_input_gradient(&shifted, t, eps)?;
        Ok((value, grad))
    };
    let opts = LbfgsOptions { max_iters: steps, ..LbfgsOptions::default() };
    let out = lbfgs::minimize(objective, vec![0.0; z.len()], &opts)?;
    Ok(NoiseOptOutcome {
        initial_error: out.initial_value,
        final_error: out.value,
        delta_norm: out.x.iter().map(|d| d * d).sum(),
        line_search_failed: out.line_search_failed,
    })
}

/// Runs every diffusion probe on one sample and records the results as a trace.
pub fn trace_dm<M: Denoiser + ?Sized>(
    model: &M,
    sample_id: &str,
    x: &[f64],
    noise: &NoiseDraws,
    config: &AttackConfig,
) -> Result<DmTrace> {
    config.validate()?;
    check_dim(model.dim(), x.len())?;
    let d = x.len();
    let mut timesteps = config.timestep_grid.clone();
    if !timesteps.contains(&config.loss_timestep) {
        timesteps.push(config.loss_timestep);
    }
    let mut grid_losses = std::collections::BTreeMap::new();
    for &t in &timesteps {
        let losses = (0..config.n_noise)
            .map(|draw| denoising_loss(model, x, t, &noise.at(t, draw, d)))
            .collect::<Result<Vec<_>>>()?;
        grid_losses.insert(t, losses);
    }
    let probe_eps = noise.named("dm-pia-noise", d);
    let pia = pia_features(model, x, &probe_eps)?;
    let pian = pian_features(model, x, &probe_eps)?;

    let gmask_eps = |t: u32| {
        if config.gmask_reuse_noise {
            noise.at(t, 0, d)
        } else {
            noise.named(&format!("dm-gmask-noise-{t}"), d)
        }
    };
    let grad_mask_error = if config.gmask_aggregate {
        let mut total = 0.0;
        for &t in &config.timestep_grid {
            total += gradient_mask_feature(model, x, t, &gmask_eps(t), config.mask_fraction)?;
        }
        total
    } else {
        let t = config.loss_timestep;
        gradient_mask_feature(model, x, t, &gmask_eps(t), config.mask_fraction)?
    };
    let t = config.loss_timestep;
    let nopt = noise_opt_features(model, x, t, &noise.at(t, 0, d), config.lbfgs_steps)?;

    let trace = DmTrace {
        sample_id: sample_id.to_string(),
        grid_losses,
        pia_error_clean: pia.clean,
        pia_error_noised: pia.noised,
        pian_error_clean: pian.clean,
        pian_error_noised: pian.noised,
        grad_mask_error,
        noiseopt_final_error: nopt.final_error,
        noiseopt_delta_norm: nopt.delta_norm,
    };
    trace.validate()?;
    Ok(trace)
}

/// Diffusion features of one sample, in raw orientation (losses are losses).
#[derive(Debug, Clone, PartialEq)]
pub struct DmFeatureRow {
    pub loss_t100: f64,
    pub grid_losses: Vec<(u32, f64)>,
    pub multi_loss: f64,
    pub pia: f64,
    pub pia_ratio: f64,
    pub pian: f64,
    pub pian_ratio: f64,
    pub gmask: f64,
    pub nopt_err: f64,
    pub nopt_delta: f64,
}

pub fn dm_feature_row(trace: &DmTrace, config: &AttackConfig) -> Result<DmFeatureRow> {
    let missing = || Error::SchemaViolation {
        sample_id: trace.sample_id.clone(),
        field: "grid".into(),
    };
    let grid_losses = config
        .timestep_grid
        .iter()
        .map(|&t| trace.mean_loss(t).map(|l| (t, l)).ok_or_else(missing))
        .collect::<Result<Vec<_>>>()?;
    let pia = ProbePair { clean: trace.pia_error_clean, noised: trace.pia_error_noised };
    let pian = ProbePair { clean: trace.pian_error_clean, noised: trace.pian_error_noised };
    Ok(DmFeatureRow {
        loss_t100: trace.mean_loss(config.loss_timestep).ok_or_else(missing)?,
        multi_loss: grid_losses.iter().map(|(_, l)| l).sum(),
        grid_losses,
        pia: pia.difference(),
        pia_ratio: pia.ratio(),
        pian: pian.difference(),
        pian_ratio: pian.ratio(),
        gmask: trace.grad_mask_error,
        nopt_err: trace.noiseopt_final_error,
        nopt_delta: trace.noiseopt_delta_norm,
    })
}

pub fn dm_feature_names(config: &AttackConfig) -> Vec<String> {
    let mut names = vec![format!("loss_t{}", config.loss_timestep)];
    names.extend(config.timestep_grid.iter().map(|t| format!("loss@{t}")));
    names.extend(
        ["multi_loss", "pia", "pia_ratio", "pian", "pian_ratio", "gmask", "nopt_err", "nopt_delta"]
            .iter()
            .map(|s| s.to_string()),
    );
    names
}

/// Feature matrix from precomputed traces, oriented so larger means more member-like.
///
/// Errors, losses and PIA statistics are negated; the perturbation norm of
/// the noise optimization is kept as is, since members need larger moves.
pub fn dm_feature_matrix(traces: &[DmTrace], config: &AttackConfig) -> Result<FeatureMatrix> {
    if traces.is_empty() {
        return Err(Error::EmptyInput);
    }
    config.validate()?;
    let mut matrix = FeatureMatrix::new(dm_feature_names(config));
    for trace in traces {
        trace.validate()?;
        let row = dm_feature_row(trace, config)?;
        let mut values = vec![-row.loss_t100];
        values.extend(row.grid_losses.iter().map(|(_, l)| -l));
        values.extend([
            -row.multi_loss,
            -row.pia,
            -row.pia_ratio,
            -row.pian,
            -row.pian_ratio,
            -row.gmask,
            -row.nopt_err,
            row.nopt_delta,
        ]);
        matrix.push_row(&trace.sample_id, values)?;
    }
    Ok(matrix)
}

/// Live path: traces every sample against `model`, then assembles the matrix.
///
/// Sample `i` of `samples` draws its noise from key (seed, i, ...).
pub fn dm_feature_matrix_live<M: Denoiser + ?Sized>(
    model: &M,
    samples: &[(String, Vec<f64>)],
    config: &AttackConfig,
    seed: u64,
) -> Result<(Vec<DmTrace>, FeatureMatrix)> {
    let traces = samples
        .iter()
        .enumerate()
        .map(|(i, (id, x))| trace_dm(model, id, x, &NoiseDraws::new(seed, i as u64), config))
        .collect::<Result<Vec<_>>>()?;
    let matrix = dm_feature_matrix(&traces, config)?;
    Ok((traces, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// f(z, t) = A z with a fixed matrix; loss gradient is -2 A^T (eps - A z).
    struct Linear {
        a: Vec<Vec<f64>>,
        sched: Schedule,
    }

    impl Denoiser for Linear {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn schedule(&self) -> &Schedule {
            &self.sched
        }
        fn predict(&self, z: &[f64], _t: u32) -> Vec<f64> {
            self.a.iter().map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
        }
        fn loss_input_gradient(&self, z: &[f64], t: u32, eps: &[f64]) -> Result<Vec<f64>> {
            let r: Vec<f64> = eps.iter().zip(self.predict(z, t)).map(|(e, f)| e - f).collect();
            Ok((0..z.len())
                .map(|j| -2.0 * (0..z.len()).map(|i| self.a[i][j] * r[i]).sum::<f64>())
                .collect())
        }
    }

    /// Returns a fixed vector regardless of input.
    struct Constant {
        out: Vec<f64>,
        sched: Schedule,
    }

    impl Denoiser for Constant {
        fn dim(&self) -> usize {
            self.out.len()
        }
        fn schedule(&self) -> &Schedule {
            &self.sched
        }
        fn predict(&self, _z: &[f64], _t: u32) -> Vec<f64> {
            self.out.clone()
        }
        fn loss_input_gradient(&self, z: &[f64], _t: u32, _eps: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0; z.len()])
        }
    }

    fn identity(d: usize) -> Linear {
        let a = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Linear { a, sched: Schedule::linear(1000) }
    }

    #[test]
    fn schedule_validation() {
        let s = Schedule::linear(1000);
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.alpha(1000), 0.0);
        assert_abs_diff_eq!(s.alpha(100), 0.9);
        assert!(Schedule::new(vec![1.0, 0.5, 0.6, 0.0]).is_err());
        assert!(Schedule::new(vec![0.9, 0.0]).is_err());
        assert!(Schedule::new(vec![1.0, 0.5, 0.5, 0.0]).is_ok());
    }

    #[test]
    fn add_noise_examples() {
        let s = Schedule::linear(1000);
        let x = [0.3, -2.0, 7.5];
        let e = [1.1, 0.2, -0.4];
        assert_eq!(add_noise(&x, 0, &e, &s).unwrap(), x.to_vec());
        assert_eq!(add_noise(&x, 1000, &e, &s).unwrap(), e.to_vec());
        let q = Schedule::new(vec![1.0, 0.25, 0.0]).unwrap();
        assert_abs_diff_eq!(add_noise(&[2.0], 1, &[4.0], &q).unwrap()[0], 1.0 + 0.75f64.sqrt() * 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(add_noise(&[2.0], 1, &[4.0], &q).unwrap()[0], 4.4641016, epsilon = 1e-7);
        assert!(matches!(add_noise(&[1.0], 0, &[1.0, 2.0], &s), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn denoising_loss_examples() {
        let sched = Schedule::linear(1000);
        let zero = Constant { out: vec![0.0, 0.0], sched: sched.clone() };
        assert_eq!(denoising_loss(&zero, &[0.5, 0.5], 100, &[1.0, 1.0]).unwrap(), 2.0);
        let off = Constant { out: vec![1.1, 1.0], sched: sched.clone() };
        assert_abs_diff_eq!(denoising_loss(&off, &[0.5, 0.5], 100, &[1.0, 1.0]).unwrap(), 0.01, epsilon = 1e-12);
        // at t = T the noised input is eps itself, so the identity is a perfect denoiser
        assert_eq!(denoising_loss(&identity(2), &[3.0, 4.0], 1000, &[0.3, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn multiple_loss_reduces_to_single() {
        let m = Constant { out: vec![0.2, -0.1, 0.4], sched: Schedule::linear(1000) };
        let noise = NoiseDraws::new(3, 0);
        let x = [0.1, 0.2, 0.3];
        let single = denoising_loss(&m, &x, 300, &noise.at(300, 0, 3)).unwrap();
        assert_eq!(multiple_loss(&m, &x, &[300], &noise).unwrap(), single);
        let both = multiple_loss(&m, &x, &[100, 300], &noise).unwrap();
        let first = denoising_loss(&m, &x, 100, &noise.at(100, 0, 3)).unwrap();
        assert_abs_diff_eq!(both, first + single, epsilon = 1e-12);
    }

    #[test]
    fn probe_pair_arithmetic() {
        let p = ProbePair { clean: 0.1, noised: 0.4 };
        assert_abs_diff_eq!(p.difference(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(p.ratio(), 4.0, epsilon = 1e-9);
        let z = ProbePair { clean: 0.0, noised: 0.0 };
        assert_eq!((z.difference(), z.ratio()), (0.0, 0.0));
        let e = ProbePair { clean: 2.0, noised: 2.0 };
        assert_abs_diff_eq!(e.ratio(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pian_matches_pia_on_standardized_output() {
        // predicted noise [1, -1, 1, -1] is already zero mean, unit variance
        let m = Constant { out: vec![1.0, -1.0, 1.0, -1.0], sched: Schedule::linear(1000) };
        let eps = [0.3, 0.9, -1.2, 0.1];
        let x = [1.0, 2.0, 3.0, 4.0];
        let a = pia_features(&m, &x, &eps).unwrap();
        let b = pian_features(&m, &x, &eps).unwrap();
        assert_abs_diff_eq!(a.clean, b.clean, epsilon = 1e-12);
        assert_abs_diff_eq!(a.noised, b.noised, epsilon = 1e-12);
    }

    #[test]
    fn pian_removes_scale() {
        // f = c * eps with eps standardized: error vanishes for any c > 0
        let eps = standardize(&[0.3, 0.9, -1.2, 0.1]);
        for c in [0.1, 1.0, 25.0] {
            let m = Constant { out: eps.iter().map(|e| c * e).collect(), sched: Schedule::linear(1000) };
            let p = pian_features(&m, &[0.0; 4], &eps).unwrap();
            assert!(p.clean < 1e-20 && p.noised < 1e-20);
        }
        // constant prediction standardizes to zero, error is ||eps||^2
        let m = Constant { out: vec![3.0; 4], sched: Schedule::linear(1000) };
        let p = pian_features(&m, &[0.0; 4], &eps).unwrap();
        assert_abs_diff_eq!(p.clean, eps.iter().map(|e| e * e).sum::<f64>(), epsilon = 1e-12);
    }

    #[test]
    fn mask_selection() {
        assert_eq!(top_fraction_mask(&[0.9, 0.1, 0.5, 0.7], 0.5), vec![true, false, false, true]);
        assert_eq!(top_fraction_mask(&[0.0; 5], 0.4), vec![true, true, false, false, false]);
        assert_eq!(top_fraction_mask(&[1.0; 8], 0.9), vec![true; 8]);
        assert_eq!(top_fraction_mask(&[0.0; 10], 0.3).iter().filter(|m| **m).count(), 3);
    }

    #[test]
    fn full_mask_equals_full_error() {
        let m = Linear {
            a: vec![vec![0.5, 0.1, 0.0], vec![0.2, 0.9, -0.3], vec![0.0, 0.4, 1.1]],
            sched: Schedule::linear(1000),
        };
        let z = [0.4, -0.2, 1.0];
        let eps = [0.3, 0.8, -0.5];
        let z_t = add_noise(&z, 100, &eps, &m.sched).unwrap();
        let f = m.predict(&eps, 100);
        let expected: f64 = (0..3).map(|i| ((eps[i] - z_t[i]) - f[i]).powi(2)).sum();
        assert_abs_diff_eq!(gradient_mask_feature(&m, &z, 100, &eps, 0.99).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn gradient_required() {
        struct NoGrad(Schedule);
        impl Denoiser for NoGrad {
            fn dim(&self) -> usize {
                2
            }
            fn schedule(&self) -> &Schedule {
                &self.0
            }
            fn predict(&self, z: &[f64], _t: u32) -> Vec<f64> {
                z.to_vec()
            }
        }
        let m = NoGrad(Schedule::linear(1000));
        assert_eq!(gradient_mask_feature(&m, &[0.0, 1.0], 100, &[1.0, 0.0], 0.5).unwrap_err(), Error::GradientUnavailable);
        assert_eq!(noise_opt_features(&m, &[0.0, 1.0], 100, &[1.0, 0.0], 5).unwrap_err(), Error::GradientUnavailable);
    }

    #[test]
    fn noise_opt_examples() {
        // perfect denoiser: nothing to optimize
        let eps = vec![0.3, -0.7, 1.2];
        let m = Constant { out: eps.clone(), sched: Schedule::linear(1000) };
        let out = noise_opt_features(&m, &[1.0, 2.0, 3.0], 100, &eps, 5).unwrap();
        assert_eq!((out.final_error, out.delta_norm), (0.0, 0.0));
        // identity denoiser: optimum delta = eps - z_t, reached within five steps
        let m = identity(3);
        let z = [0.5, -1.0, 2.0];
        let z_t = add_noise(&z, 100, &eps, &m.sched).unwrap();
        let out = noise_opt_features(&m, &z, 100, &eps, 5).unwrap();
        assert!(out.final_error < 1e-20);
        let expected: f64 = eps.iter().zip(&z_t).map(|(e, zt)| (e - zt).powi(2)).sum();
        assert_abs_diff_eq!(out.delta_norm, expected, epsilon = 1e-9);
        assert!(matches!(noise_opt_features(&m, &z, 100, &eps, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn trace_and_matrix() {
        let m = Linear {
            a: vec![vec![0.5, 0.1], vec![0.2, 0.9]],
            sched: Schedule::linear(1000),
        };
        let cfg = AttackConfig::default();
        let samples = vec![("a".to_string(), vec![0.1, 0.2]), ("b".to_string(), vec![-1.0, 0.5])];
        let (traces, fm) = dm_feature_matrix_live(&m, &samples, &cfg, 9).unwrap();
        assert_eq!(fm.n_features(), 1 + 10 + 8);
        assert_eq!(fm.feature_names()[0], "loss_t100");
        let (_, again) = dm_feature_matrix_live(&m, &samples, &cfg, 9).unwrap();
        assert_eq!(fm, again);
        // precomputed path reproduces the live matrix
        assert_eq!(dm_feature_matrix(&traces, &cfg).unwrap(), fm);
        let mut broken = traces[0].clone();
        broken.grid_losses.remove(&300);
        assert!(matches!(
            dm_feature_matrix(&[broken], &cfg),
            Err(Error::SchemaViolation { field, .. }) if field == "grid"
        ));
    }
}
