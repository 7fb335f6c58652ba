//! Seeded, counter-based random streams.
//!
//! Every stochastic operation derives its own ChaCha8 stream from a master
//! seed and a tuple of tags (domain, block index, chunk index, ...). Streams
//! never depend on scheduling, so a parallel run reproduces a sequential one
//! bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains.
pub mod domain {
    pub const DESIGN: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const MESSAGE: u64 = 3;
    pub const STATE_EVOLUTION: u64 = 4;
    pub const PREDICTION: u64 = 5;
    pub const TEST_INPUT: u64 = 6;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Returns the stream identified by `tags` under `seed`.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let id = tags.iter().fold(0x243f_6a88_85a3_08d3_u64, |acc, &t| splitmix(acc ^ splitmix(t)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
