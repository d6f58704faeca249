//! Deterministic randomness.
//!
//! Every stochastic stage draws from a ChaCha8 stream (`rand_chacha`,
//! 8 rounds, 64-bit block counter). The 256-bit key is expanded from the
//! 64-bit seed with SplitMix64, so the first outputs of a given seed are
//! identical on every platform and every run.
//!
//! Named substreams mix an FNV-1a hash of the label (and optional indices)
//! into the seed before expansion. Two stages with different labels never
//! share a key, and re-running a single stage reproduces its draws without
//! replaying the stages before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type AuditRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut hash: u64) -> u64 {
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Generator for a raw seed.
pub fn seeded_rng(seed: u64) -> AuditRng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Seed of the substream `label` under `seed`, further keyed by `indices`.
pub fn substream_seed(seed: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hash = fnv1a(seed.to_le_bytes(), FNV_OFFSET);
    hash = fnv1a(label.bytes(), hash);
    for idx in indices {
        // separator so ("a", [1]) and ("a\x01", []) differ
        hash = fnv1a(std::iter::once(0xff).chain(idx.to_le_bytes()), hash);
    }
    let mut state = hash;
    splitmix64(&mut state)
}

/// Independent, reproducible generator for a named stage.
pub fn split(seed: u64, label: &str) -> AuditRng {
    seeded_rng(substream_seed(seed, label, &[]))
}

/// Like [`split`], additionally keyed by integer indices (sample, timestep, ...).
pub fn split_indexed(seed: u64, label: &str, indices: &[u64]) -> AuditRng {
    seeded_rng(substream_seed(seed, label, indices))
}
