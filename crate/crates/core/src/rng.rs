//! Named random substreams derived from a single run seed.
//!
//! Every consumer of randomness (data generation, weight init, sampling, ...)
//! asks for its own stream by name, so components never share RNG state and
//! adding draws in one place cannot shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the substream `name` of `seed` (FNV-1a over the name, mixed with splitmix64).
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn substream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(substream_seed(seed, name))
}

/// Substream indexed by an integer, e.g. one per generated scene.
pub fn indexed(seed: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(splitmix64(substream_seed(seed, name) ^ splitmix64(index)))
}

pub fn derive(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(substream_seed(seed, name) ^ splitmix64(index))
}
