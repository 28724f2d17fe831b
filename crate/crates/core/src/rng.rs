//! Seed derivation for reproducible parallel streams.
//!
//! Every replicate or permutation gets its own generator seeded with
//! `mix(seed, index)`, so results do not depend on scheduling or worker
//! count. The generator is ChaCha8; `mix` is two rounds of the SplitMix64
//! finalizer:
//!
//! ```text
//! mix(seed, i) = splitmix64(seed ^ splitmix64(i))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Generator for stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(mix(seed, index))
}
