//! Seeded RNG construction. Every random draw in the crate goes through
//! [`seeded`] so results depend only on the seeds in the configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives the seed of sub-component `stream` of a run.
pub fn mix(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer, so nearby (seed, stream) pairs decorrelate.
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream `stream` of a run seeded with `seed`.
pub fn derived(seed: u64, stream: u64) -> Rng {
    seeded(mix(seed, stream))
}
