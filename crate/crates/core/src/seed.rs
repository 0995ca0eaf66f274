//! Deterministic seed derivation.
//!
//! Every random stream in a run is a ChaCha8 generator keyed by a seed derived
//! from the master seed and a small tuple of integers naming the stream, so
//! results never depend on scheduling or on how many streams were drawn before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are arbitrary but frozen: changing one changes results.
pub mod tag {
    pub const INIT: u64 = 0x1A17;
    pub const SHUFFLE: u64 = 0x5F0F;
    pub const PARTITION: u64 = 0x9A27;
    pub const SUBSAMPLE: u64 = 0x5B5A;
    pub const GOSSIP: u64 = 0x6055;
    pub const PERMUTATION: u64 = 0x7E73;
    pub const SYNTH: u64 = 0x5E17;
    pub const SUITE: u64 = 0x5017;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `master`, one splitmix round per part.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, parts: &[u64]) -> ChaCha8Rng {
    rng(derive(master, parts))
}
