//! Seeded RNG streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, purpose, a, b)`, so results do not depend on call interleaving
//! or on how many worker threads evaluate the population.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for [`stream`].
pub mod purpose {
    pub const STAR_INIT: u64 = 1;
    pub const POP_INIT: u64 = 2;
    pub const ONLINE: u64 = 3;
    pub const OFFLINE: u64 = 4;
    pub const SELECTION: u64 = 5;
    pub const EVALUATION: u64 = 6;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, purpose, a, b)`.
pub fn stream(seed: u64, purpose: u64, a: u64, b: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (i, part) in [purpose, a, b, 0x5eed].into_iter().enumerate() {
        h = splitmix64(h ^ part.rotate_left(17 * i as u32 + 1));
        key[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
