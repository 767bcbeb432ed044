//! Seeded random streams.
//!
//! Every (sequence, sample) pair gets its own ChaCha stream so that samples
//! can be drawn in any order or in parallel and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream index reserved for bootstrap resampling of a sequence.
pub const BOOTSTRAP_STREAM: u64 = u64::MAX;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for `(seed, sequence, stream)`.
pub fn stream_rng(seed: u64, sequence: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(sequence)));
    rng.set_stream(stream);
    rng
}
