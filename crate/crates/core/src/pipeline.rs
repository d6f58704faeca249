//! Glue between toy checkpoints, traces and feature matrices.

use serde::{Deserialize, Serialize};

use crate::arm::arm_feature_matrix;
use crate::config::AttackConfig;
use crate::dm::{dm_feature_matrix, trace_dm, NoiseDraws};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::toy::corpus::{regenerate_ar, regenerate_dm, SyntheticCorpus};
use crate::toy::{trace_ar, Checkpoint, ToyModel};
use crate::trace::{ArmTrace, DmTrace, Traces};

/// Which side of a toy corpus to trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSide {
    Members,
    Nonmembers,
}

pub fn feature_matrix(traces: &Traces, config: &AttackConfig) -> Result<FeatureMatrix> {
    match traces {
        Traces::Arm(t) => arm_feature_matrix(t, config),
        Traces::Dm(t) => dm_feature_matrix(t, config),
    }
}

/// Features of the suspect and reference traces, computed jointly so both
/// matrices share one column set, then split back.
pub fn paired_feature_matrices(suspects: &Traces, references: &Traces, config: &AttackConfig) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let joint = match (suspects, references) {
        (Traces::Arm(p), Traces::Arm(u)) => {
            let all: Vec<ArmTrace> = p.iter().chain(u).cloned().collect();
            arm_feature_matrix(&all, config)?
        }
        (Traces::Dm(p), Traces::Dm(u)) => {
            let all: Vec<DmTrace> = p.iter().chain(u).cloned().collect();
            dm_feature_matrix(&all, config)?
        }
        _ => return Err(Error::InvalidConfig("suspect and reference traces differ in modality".into())),
    };
    Ok((joint.select(&suspects.ids())?, joint.select(&references.ids())?))
}

/// Traces the first `limit` samples of one side of the checkpoint's corpus.
///
/// Sample ids follow [`SyntheticCorpus::member_id`] and
/// [`SyntheticCorpus::nonmember_id`]. Diffusion sample `i` draws noise from
/// key (seed, i), so equal positions on both sides share noise.
pub fn trace_checkpoint(
    checkpoint: &Checkpoint,
    side: CorpusSide,
    limit: Option<usize>,
    config: &AttackConfig,
    seed: u64,
) -> Result<Traces> {
    let take = |n: usize| limit.map_or(n, |l| l.min(n));
    match &checkpoint.model {
        ToyModel::Arm(model) => {
            let corpus = regenerate_ar(&checkpoint.corpus)?;
            let (samples, id): (_, fn(usize) -> String) = match side {
                CorpusSide::Members => (&corpus.members, SyntheticCorpus::<()>::member_id),
                CorpusSide::Nonmembers => (&corpus.nonmembers, SyntheticCorpus::<()>::nonmember_id),
            };
            let traces = samples
                .iter()
                .take(take(samples.len()))
                .enumerate()
                .map(|(i, s)| trace_ar(model, &id(i), s))
                .collect::<Result<Vec<_>>>()?;
            Ok(Traces::Arm(traces))
        }
        ToyModel::Dm(model) => {
            let corpus = regenerate_dm(&checkpoint.corpus)?;
            let (samples, id): (_, fn(usize) -> String) = match side {
                CorpusSide::Members => (&corpus.members, SyntheticCorpus::<()>::member_id),
                CorpusSide::Nonmembers => (&corpus.nonmembers, SyntheticCorpus::<()>::nonmember_id),
            };
            let traces = samples
                .iter()
                .take(take(samples.len()))
                .enumerate()
                .map(|(i, x)| trace_dm(model, &id(i), x, &NoiseDraws::new(seed, i as u64), config))
                .collect::<Result<Vec<_>>>()?;
            Ok(Traces::Dm(traces))
        }
    }
}
