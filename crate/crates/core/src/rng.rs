//! Deterministic random streams.
//!
//! Every source of randomness in a run is a [`Stream`] seeded from the run
//! seed and a fixed tag, so independent consumers never share state and a
//! `(config, seed)` pair reproduces a run bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer, used to decorrelate derived seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ mix(tag.wrapping_add(0x51_7C_C1_B7_27_22_0A_95)))
}

pub fn stream(seed: u64, tag: u64) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, tag))
}

/// Stream tags used by the training loop.
pub mod tags {
    pub const MODEL_INIT: u64 = 1;
    pub const ENV: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const EVAL_SCENES: u64 = 5;
    pub const EVAL_OUTCOMES: u64 = 6;
    pub const EVAL_POLICY: u64 = 7;
    pub const BOOTSTRAP: u64 = 8;
}
