//! Deterministic stream derivation. Every random decision in the crate flows
//! from one master seed; independent streams (per sweep point, per batch
//! element, per training step) are derived by mixing a stream id into the
//! master seed so results are reproducible regardless of worker scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche for seed mixing.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG from `master` and a stream id.
pub fn derive_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(master ^ splitmix64(stream)))
}

/// Two-level stream derivation, e.g. (sweep point, block index).
pub fn derive_rng2(master: u64, a: u64, b: u64) -> ChaCha8Rng {
    derive_rng(master, splitmix64(a).wrapping_add(b))
}
