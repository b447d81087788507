//! Counter-addressed random streams.
//!
//! Every draw in a filter run comes from a stream keyed by
//! `(seed, step, lane)`, so results do not depend on how particles are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Words reserved per lane inside a step's stream.
const LANE_WORDS: u32 = 20;

/// Lane used for the single uniform of systematic resampling.
pub const RESAMPLE_LANE: u64 = (1 << 40) - 1;

pub fn stream(seed: u64, step: u64, lane: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng.set_word_pos((lane as u128) << LANE_WORDS);
    rng
}
