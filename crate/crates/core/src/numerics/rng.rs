//! Seeded, splittable random streams.
//!
//! Each consumer derives its own ChaCha stream from `(seed, stream id)`, so
//! adding a consumer never perturbs the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Well-known stream ids.
pub mod stream {
    pub const INPUT_BLOCK: u64 = 1;
    pub const TEACHER: u64 = 2;
    pub const STUDENT_BACKBONE: u64 = 3;
    pub const STUDENT_ADAPTERS: u64 = 4;
    pub const GUIDANCE: u64 = 5;
    pub const DICTIONARY: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const SYNTH: u64 = 8;
    pub const DECODERS: u64 = 9;
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream `stream` further split by an index (e.g. epoch, block).
pub fn rng_for_indexed(seed: u64, stream: u64, index: u64) -> Rng {
    rng_for(seed, (stream << 32) | (index & 0xffff_ffff))
}
