//! Seed derivation for reproducible runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; spreads nearby integers across the seed space.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base seed with a list of coordinates into one seed.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix64(base), |acc, &c| mix64(acc ^ mix64(c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Per-vehicle acceleration noise.
    Motion,
    /// Injection lanes, class/route assignment and report perturbation.
    Events,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let tag = match which {
        Stream::Motion => 1,
        Stream::Events => 2,
    };
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag]))
}
