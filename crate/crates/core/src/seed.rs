//! Seed splitting.
//!
//! A master seed keys one ChaCha8 generator per purpose. Each purpose uses
//! the same 256-bit key (derived from the master seed) with a distinct
//! ChaCha stream id, so consuming one stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT_STREAM: u64 = 1;
pub const SHUFFLE_STREAM: u64 = 2;
pub const DROPOUT_STREAM: u64 = 3;
pub const SYNTH_STREAM: u64 = 4;

#[derive(Debug, Clone)]
pub struct SeedBundle {
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub synth: ChaCha8Rng,
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn seed_everything(seed: u64) -> SeedBundle {
    SeedBundle {
        init: stream(seed, INIT_STREAM),
        shuffle: stream(seed, SHUFFLE_STREAM),
        dropout: stream(seed, DROPOUT_STREAM),
        synth: stream(seed, SYNTH_STREAM),
    }
}
