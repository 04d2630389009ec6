//! Deterministic substream derivation from one master seed.
//!
//! Every consumer of randomness derives its own ChaCha8 stream from
//! (master seed, label, a, b) so that device parallelism and evaluation
//! order can never perturb a run. The derivation is a splitmix64 chain over
//! the label bytes and the two keys.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a purpose label and two integer keys.
pub fn mix(master: u64, label: &str, a: u64, b: u64) -> u64 {
    let mut state = splitmix64(master);
    for &byte in label.as_bytes() {
        state = splitmix64(state ^ u64::from(byte));
    }
    state = splitmix64(state ^ a);
    splitmix64(state ^ b)
}

/// Seeded generator for the given substream.
pub fn stream(master: u64, label: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, label, a, b))
}

/// Labels used by the federation loop; fixed so that external tools can
/// reproduce individual streams.
pub mod labels {
    /// Shared model initialization draw.
    pub const INIT: &str = "init";
    /// Per-(round, device) example shuffling inside local training.
    pub const SHUFFLE: &str = "shuffle";
    /// Per-(round, device) fading draw.
    pub const CHANNEL: &str = "channel";
    /// Dataset partitioning.
    pub const PARTITION: &str = "partition";
    /// Synthetic dataset generation (train/test keyed by `a`).
    pub const BLOBS: &str = "blobs";
}
