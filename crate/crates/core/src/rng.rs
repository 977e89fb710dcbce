//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream keyed by
//! `(base seed, domain, index)`. Streams for different indices are
//! statistically independent, so work can be split across threads or
//! reordered without changing any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains. Distinct domains never share a key.
pub mod domain {
    pub const DBT_TIMESTEP: u64 = 1;
    pub const CARD_T_TIMESTEP: u64 = 2;
    pub const SAMPLE_CHAIN: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const MCAR: u64 = 5;
    pub const TOY: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: u64, index: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(domain));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
