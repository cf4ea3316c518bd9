//! One root seed, independent ChaCha substreams per purpose and item.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    TrainData = 1,
    TestData = 2,
    Init = 3,
    Shuffle = 4,
}

/// Generator for `(purpose, index)`; the stream id keeps the purpose in its top 16 bits.
pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}
