//! Seed derivation. Every stochastic step draws from its own ChaCha stream
//! keyed by a global seed plus a stream tag, so results do not depend on the
//! order in which independent pieces of work are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with an arbitrary list of stream tags.
pub fn derive_seed(seed: u64, tags: &[i64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t as u64)))
}

pub fn stream(seed: u64, tags: &[i64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stable 32-bit integer hash (used for instance colors).
pub fn hash_u32(x: u32) -> u32 {
    (splitmix64(x as u64) >> 32) as u32
}
