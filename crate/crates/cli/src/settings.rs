//! Optional TOML run configuration. Command-line flags override file values.

use std::path::Path;

use dinfer::di::DiConfig;
use dinfer::toy::CorpusSpec;
use dinfer::{AttackConfig, Modality};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub attack: AttackConfig,
    pub di: DiConfig,
    pub train: TrainSettings,
}

/// Toy training settings; unset fields take modality-specific defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub n_members: Option<usize>,
    pub n_nonmembers: Option<usize>,
    pub length: Option<usize>,
    pub vocab: Option<usize>,
    pub n_conditions: Option<usize>,
    pub concentration: Option<f64>,
    pub dim: Option<usize>,
}

impl TrainSettings {
    /// Flags in `over` win over values in `self`.
    pub fn merged(&self, over: &TrainSettings) -> TrainSettings {
        TrainSettings {
            epochs: over.epochs.or(self.epochs),
            lr: over.lr.or(self.lr),
            n_members: over.n_members.or(self.n_members),
            n_nonmembers: over.n_nonmembers.or(self.n_nonmembers),
            length: over.length.or(self.length),
            vocab: over.vocab.or(self.vocab),
            n_conditions: over.n_conditions.or(self.n_conditions),
            concentration: over.concentration.or(self.concentration),
            dim: over.dim.or(self.dim),
        }
    }

    /// (corpus spec, epochs, learning rate) with defaults filled in.
    pub fn resolve(&self, modality: Modality, seed: u64) -> (CorpusSpec, usize, f64) {
        match modality {
            Modality::Arm => (
                CorpusSpec::Arm {
                    seed,
                    n_members: self.n_members.unwrap_or(100),
                    n_nonmembers: self.n_nonmembers.unwrap_or(500),
                    length: self.length.unwrap_or(32),
                    vocab: self.vocab.unwrap_or(dinfer::toy::ar::DEFAULT_VOCAB),
                    n_conditions: self.n_conditions.unwrap_or(dinfer::toy::corpus::DEFAULT_CONDITIONS),
                    concentration: self.concentration.unwrap_or(dinfer::toy::corpus::DEFAULT_CONCENTRATION),
                },
                self.epochs.unwrap_or(300),
                self.lr.unwrap_or(1.0),
            ),
            Modality::Dm => (
                CorpusSpec::Dm {
                    seed,
                    n_members: self.n_members.unwrap_or(50),
                    n_nonmembers: self.n_nonmembers.unwrap_or(500),
                    dim: self.dim.unwrap_or(dinfer::toy::dm::DEFAULT_DIM),
                },
                self.epochs.unwrap_or(10_000),
                self.lr.unwrap_or(0.01),
            ),
        }
    }
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = crate::io::read_to_string(path)?;
    let cfg: FileConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.attack.validate()?;
    cfg.di.validate()?;
    Ok(cfg)
}
