//! Counter-based seed derivation.
//!
//! Every random draw is taken from a generator seeded by `mix(master, stream, t)`,
//! so draws at different `(stream, t)` pairs never share state and can be
//! reproduced in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers used by the simulator.
pub mod stream {
    pub const INPUT: u64 = 0;
    pub const PROCESS: u64 = 1;
    pub const OBSERVATION: u64 = 2;
    pub const INITIAL: u64 = 3;
    pub const AUX: u64 = 4;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed, a stream id and a counter into a 64-bit seed.
pub fn mix(master: u64, stream: u64, counter: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ counter)
}

/// Seed for trial `index` of a Monte-Carlo experiment rooted at `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(master, u64::MAX, index)
}

/// Generator for `(master, stream, counter)`.
pub fn substream(master: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, stream, counter))
}
