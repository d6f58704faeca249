use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attack hyperparameters shared by the autoregressive and diffusion suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Decision threshold for single-sample membership calls.
    pub threshold: f64,
    /// Min-K% / Min-K%++ / SURP percent grid.
    pub k_grid: Vec<u32>,
    /// SURP entropy thresholds, nats.
    pub entropy_grid: Vec<f64>,
    pub timestep_grid: Vec<u32>,
    /// Timestep of the single-step denoising-loss attack.
    pub loss_timestep: u32,
    pub mask_fraction: f64,
    pub lbfgs_steps: usize,
    /// CAMIA count-below cutoff, nats.
    pub count_below_cutoff: f64,
    /// Noise draws averaged per timestep for diffusion losses.
    pub n_noise: usize,
    /// Sum the gradient-masking error over the whole timestep grid.
    pub gmask_aggregate: bool,
    /// Reuse the loss noise draw inside the gradient-masking perturbation.
    pub gmask_reuse_noise: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            k_grid: vec![10, 20, 30, 40, 50],
            entropy_grid: vec![2.0, 4.0, 8.0, 16.0],
            timestep_grid: (0..10).map(|i| i * 100).collect(),
            loss_timestep: 100,
            mask_fraction: 0.2,
            lbfgs_steps: 5,
            count_below_cutoff: 1.0,
            n_noise: 4,
            gmask_aggregate: false,
            gmask_reuse_noise: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.k_grid.is_empty() || self.entropy_grid.is_empty() || self.timestep_grid.is_empty() {
            return bad("attack grids must be non-empty");
        }
        if self.k_grid.iter().any(|k| !(1..=100).contains(k)) {
            return bad("k_grid entries must lie in [1, 100]");
        }
        if self.entropy_grid.iter().any(|e| !e.is_finite()) {
            return bad("entropy_grid entries must be finite");
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return bad("mask_fraction must lie in (0, 1)");
        }
        if self.lbfgs_steps < 1 {
            return bad("lbfgs_steps must be at least 1");
        }
        if self.n_noise < 1 {
            return bad("n_noise must be at least 1");
        }
        if !self.count_below_cutoff.is_finite() {
            return bad("count_below_cutoff must be finite");
        }
        Ok(())
    }
}
