//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by the
//! run seed, with the ChaCha stream id derived from a tuple of counters (record
//! index, step, sample index, ...). Work items therefore never share generator
//! state, and serial and parallel execution consume identical random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same counters apart.
pub mod tag {
    pub const SYNTHETIC: u64 = 1;
    pub const INIT: u64 = 2;
    pub const MASK: u64 = 3;
    pub const PERTURB: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const CORRUPT: u64 = 6;
    pub const DECODE: u64 = 7;
    pub const GRADCHECK: u64 = 8;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a tuple of counters into a single stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Generator for the stream identified by `parts` under `seed`.
pub fn stream(seed: u64, parts: &[u64]) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(parts));
    rng
}

/// FNV-1a, used to give each named parameter its own init stream.
pub fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
