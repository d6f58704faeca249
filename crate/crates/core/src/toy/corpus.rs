//! Seeded synthetic corpora with an i.i.d. member / non-member split.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One token sequence with its condition label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArSample {
    pub tokens: Vec<u32>,
    pub condition: u32,
}

/// Everything needed to regenerate a corpus bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusSpec {
    Arm {
        seed: u64,
        n_members: usize,
        n_nonmembers: usize,
        length: usize,
        vocab: usize,
        n_conditions: usize,
        /// Dirichlet concentration of the transition rows; smaller is more predictable.
        concentration: f64,
    },
    Dm {
        seed: u64,
        n_members: usize,
        n_nonmembers: usize,
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus<S> {
    pub members: Vec<S>,
    pub nonmembers: Vec<S>,
    pub spec: CorpusSpec,
}

impl<S> SyntheticCorpus<S> {
    pub fn member_id(i: usize) -> String {
        format!("member-{i:05}")
    }

    pub fn nonmember_id(i: usize) -> String {
        format!("nonmember-{i:05}")
    }

    /// (id, sample) pairs, members first.
    pub fn labelled(&self) -> impl Iterator<Item = (String, &S, bool)> {
        self.members
            .iter()
            .enumerate()
            .map(|(i, s)| (Self::member_id(i), s, true))
            .chain(
                self.nonmembers
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (Self::nonmember_id(i), s, false)),
            )
    }
}

pub const DEFAULT_CONDITIONS: usize = 4;
pub const DEFAULT_CONCENTRATION: f64 = 0.2;

/// Order-2 Markov source, one transition table per condition.
struct MarkovSource {
    vocab: usize,
    /// [condition][prev2 * vocab + prev1] -> cumulative next-token distribution
    cdfs: Vec<Vec<Vec<f64>>>,
}

impl MarkovSource {
    fn new(seed: u64, vocab: usize, n_conditions: usize, concentration: f64) -> Result<Self> {
        let gamma = Gamma::new(concentration, 1.0)
            .map_err(|e| Error::InvalidConfig(format!("concentration: {e}")))?;
        let mut r = rng::split(seed, "ar-corpus-table");
        let cdfs = (0..n_conditions)
            .map(|_| {
                (0..vocab * vocab)
                    .map(|_| {
                        let w: Vec<f64> = (0..vocab).map(|_| gamma.sample(&mut r) + 1e-12).collect();
                        let total: f64 = w.iter().sum();
                        let mut acc = 0.0;
                        w.iter()
                            .map(|x| {
                                acc += x / total;
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { vocab, cdfs })
    }

    fn draw<R: Rng>(&self, r: &mut R, length: usize) -> ArSample {
        let condition = r.random_range(0..self.cdfs.len()) as u32;
        let mut tokens = Vec::with_capacity(length);
        for i in 0..length {
            let tok = if i < 2 {
                r.random_range(0..self.vocab) as u32
            } else {
                let ctx = tokens[i - 2] as usize * self.vocab + tokens[i - 1] as usize;
                let cdf = &self.cdfs[condition as usize][ctx];
                let u: f64 = r.random();
                cdf.partition_point(|&c| c < u).min(self.vocab - 1) as u32
            };
            tokens.push(tok);
        }
        ArSample { tokens, condition }
    }
}

/// Token corpus split in half: the first `n_sequences / 2` draws are members.
pub fn synth_ar_corpus(seed: u64, n_sequences: usize, length: usize, vocab: usize) -> Result<SyntheticCorpus<ArSample>> {
    let members = n_sequences / 2;
    synth_ar_corpus_split(&CorpusSpec::Arm {
        seed,
        n_members: members,
        n_nonmembers: n_sequences - members,
        length,
        vocab,
        n_conditions: DEFAULT_CONDITIONS,
        concentration: DEFAULT_CONCENTRATION,
    })
}

/// Token corpus with explicit split sizes.
///
/// Sequences are drawn one after another from a single stream, so the
/// members of a spec are a prefix-stable function of the seed: enlarging
/// `n_nonmembers` never changes the member sequences.
pub fn synth_ar_corpus_split(spec: &CorpusSpec) -> Result<SyntheticCorpus<ArSample>> {
    let CorpusSpec::Arm { seed, n_members, n_nonmembers, length, vocab, n_conditions, concentration } = *spec else {
        return Err(Error::InvalidConfig("expected a token corpus spec".into()));
    };
    if n_members + n_nonmembers < 2 || length < 2 {
        return Err(Error::InvalidConfig("corpus needs at least two sequences of length two".into()));
    }
    if vocab < 2 {
        return Err(Error::InvalidConfig("vocabulary must hold at least two tokens".into()));
    }
    if n_conditions < 1 {
        return Err(Error::InvalidConfig("need at least one condition".into()));
    }
    let source = MarkovSource::new(seed, vocab, n_conditions, concentration)?;
    let mut r = rng::split(seed, "ar-corpus-seq");
    let mut seen = HashSet::new();
    let mut all = Vec::with_capacity(n_members + n_nonmembers);
    while all.len() < n_members + n_nonmembers {
        let s = source.draw(&mut r, length);
        if seen.insert(s.clone()) {
            all.push(s);
        }
    }
    let nonmembers = all.split_off(n_members);
    Ok(SyntheticCorpus { members: all, nonmembers, spec: spec.clone() })
}

/// Standard-normal points in `dim` dimensions.
pub fn synth_dm_corpus(seed: u64, n_members: usize, n_nonmembers: usize, dim: usize) -> Result<SyntheticCorpus<Vec<f64>>> {
    synth_dm_corpus_split(&CorpusSpec::Dm { seed, n_members, n_nonmembers, dim })
}

pub fn synth_dm_corpus_split(spec: &CorpusSpec) -> Result<SyntheticCorpus<Vec<f64>>> {
    let CorpusSpec::Dm { seed, n_members, n_nonmembers, dim } = *spec else {
        return Err(Error::InvalidConfig("expected a diffusion corpus spec".into()));
    };
    if n_members + n_nonmembers < 2 || dim < 2 {
        return Err(Error::InvalidConfig("corpus needs at least two points of dimension two".into()));
    }
    let mut r = rng::split(seed, "dm-corpus");
    let mut all: Vec<Vec<f64>> = (0..n_members + n_nonmembers)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect();
    let nonmembers = all.split_off(n_members);
    Ok(SyntheticCorpus { members: all, nonmembers, spec: spec.clone() })
}

pub fn regenerate_ar(spec: &CorpusSpec) -> Result<SyntheticCorpus<ArSample>> {
    synth_ar_corpus_split(spec)
}

pub fn regenerate_dm(spec: &CorpusSpec) -> Result<SyntheticCorpus<Vec<f64>>> {
    synth_dm_corpus_split(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(synth_ar_corpus(0, 20, 16, 32).unwrap(), synth_ar_corpus(0, 20, 16, 32).unwrap());
        assert_ne!(synth_ar_corpus(0, 20, 16, 32).unwrap().members, synth_ar_corpus(1, 20, 16, 32).unwrap().members);
    }

    #[test]
    fn split_sizes() {
        let c = synth_ar_corpus(0, 10, 16, 32).unwrap();
        assert_eq!((c.members.len(), c.nonmembers.len()), (5, 5));
        assert!(c.members.iter().chain(&c.nonmembers).all(|s| s.tokens.len() == 16));
        assert!(c.members.iter().all(|m| !c.nonmembers.contains(m)));
        assert!(c.members.iter().flat_map(|s| &s.tokens).all(|&t| t < 32));
    }

    #[test]
    fn degenerate_vocab_rejected() {
        assert!(matches!(synth_ar_corpus(0, 10, 16, 1), Err(Error::InvalidConfig(_))));
        assert!(synth_ar_corpus(0, 1, 16, 32).is_err());
    }

    #[test]
    fn members_are_prefix_stable() {
        let spec = |n_nonmembers| CorpusSpec::Arm {
            seed: 3,
            n_members: 7,
            n_nonmembers,
            length: 12,
            vocab: 16,
            n_conditions: 4,
            concentration: 0.2,
        };
        let small = synth_ar_corpus_split(&spec(3)).unwrap();
        let large = synth_ar_corpus_split(&spec(50)).unwrap();
        assert_eq!(small.members, large.members);
        assert_eq!(small.nonmembers[..], large.nonmembers[..3]);
    }

    #[test]
    fn source_is_compressible() {
        // a peaked order-2 source repeats itself more than uniform noise would
        let c = synth_ar_corpus(5, 400, 16, 32).unwrap();
        let mut counts = std::collections::HashMap::new();
        for s in &c.members {
            for w in s.tokens.windows(3) {
                *counts.entry((s.condition, w[0], w[1], w[2])).or_insert(0usize) += 1;
            }
        }
        let repeated = counts.values().filter(|&&v| v > 1).count();
        assert!(repeated > 50, "{repeated}");
    }

    #[test]
    fn dm_corpus() {
        let c = synth_dm_corpus(0, 50, 60, 8).unwrap();
        assert_eq!((c.members.len(), c.nonmembers.len()), (50, 60));
        assert_eq!(c, synth_dm_corpus(0, 50, 60, 8).unwrap());
        assert_eq!(SyntheticCorpus::<Vec<f64>>::member_id(3), "member-00003");
    }
}
