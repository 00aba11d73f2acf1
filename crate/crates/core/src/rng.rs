//! Seeded random streams.
//!
//! Every source of randomness in a run (weight init, shuffling, negative
//! sampling, dropout, evaluation sampling) draws from its own named stream
//! derived from the single user-facing seed, so one seed reproduces a whole
//! run and changing e.g. the number of negatives does not perturb dropout.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Derive a child seed from `(seed, label)` with a small FNV-1a mix.
fn child_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    for b in label.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A named substream of the run seed.
pub fn stream(seed: u64, label: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(child_seed(seed, label))
}

/// A named substream further indexed by a counter (e.g. per epoch).
pub fn indexed_stream(seed: u64, label: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, label));
    rng.set_stream(index);
    rng
}
