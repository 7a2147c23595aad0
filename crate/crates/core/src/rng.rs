//! Counter-based random streams.
//!
//! Stream `i` of master seed `s` is ChaCha8 keyed by `s` with stream id `i`.
//! Workers that take disjoint stream ids never share state, so parallel
//! results depend only on `(seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
