//! Desk-scale trainable models that emit the trace schema.

pub mod ar;
pub mod corpus;
pub mod dm;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Modality;

pub use ar::{trace_ar, train_toy_ar, ToyArModel};
pub use corpus::{synth_ar_corpus, synth_dm_corpus, ArSample, CorpusSpec, SyntheticCorpus};
pub use dm::{train_toy_dm, ToyDmModel};

/// Bumped on any change to the serialized parameter layout.
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", rename_all = "lowercase")]
pub enum ToyModel {
    Arm(ToyArModel),
    Dm(ToyDmModel),
}

impl ToyModel {
    pub fn modality(&self) -> Modality {
        match self {
            ToyModel::Arm(_) => Modality::Arm,
            ToyModel::Dm(_) => Modality::Dm,
        }
    }
}

/// JSON parameter dump plus everything needed to rebuild the training corpus.
///
/// Layout: `{"format": 1, "corpus": CorpusSpec, "epochs", "lr", "seed",
/// "final_loss", "model": {"modality": "arm"|"dm", ...row-major weights}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub corpus: CorpusSpec,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub model: ToyModel,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        w.write_all(s.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::InvalidConfig(format!("writing checkpoint: {e}")))
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(r).map_err(|e| Error::SchemaViolation {
            sample_id: "checkpoint".into(),
            field: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::SchemaViolation {
                sample_id: "checkpoint".into(),
                field: format!("unsupported format {}", ck.format),
            });
        }
        Ok(ck)
    }
}

/// Builds the corpus from `spec`, trains on its members and packs the result.
pub fn train_checkpoint(spec: CorpusSpec, epochs: usize, lr: f64, seed: u64) -> Result<Checkpoint> {
    if epochs < 1 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    let (model, report) = match spec {
        CorpusSpec::Arm { vocab, n_conditions, .. } => {
            let corpus = corpus::synth_ar_corpus_split(&spec)?;
            let init = ToyArModel::new(vocab, ar::DEFAULT_WINDOW, ar::DEFAULT_EMBED, ar::DEFAULT_HIDDEN, n_conditions, seed);
            let mut t = ar::ArTrainer::with_model(init, &corpus.members, lr, seed)?;
            for _ in 0..epochs {
                t.run_epoch()?;
            }
            (ToyModel::Arm(t.model), t.report)
        }
        CorpusSpec::Dm { dim, .. } => {
            let corpus = corpus::synth_dm_corpus_split(&spec)?;
            let init = ToyDmModel::new(dim, dm::DEFAULT_HIDDEN, crate::dm::Schedule::linear(dm::DEFAULT_T_MAX), seed)?;
            let mut t = dm::DmTrainer::with_model(init, &corpus.members, lr, seed)?;
            for _ in 0..epochs {
                t.run_epoch()?;
            }
            (ToyModel::Dm(t.model), t.report)
        }
    };
    Ok(Checkpoint { format: CHECKPOINT_FORMAT, corpus: spec, epochs, lr, seed, final_loss: report.final_loss(), model })
}
