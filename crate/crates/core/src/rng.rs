//! Seeded random streams. Each run seed fans out into independent ChaCha
//! streams so that, e.g., environment noise is unchanged when only the
//! policy or its objective changes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    TrainEnv = 2,
    TrainAction = 3,
    TestEnv = 4,
    TestAction = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// SplitMix64 finalizer, used to derive sub-seeds (e.g. one per episode).
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for `(seed, stream, index)`.
pub fn derive(seed: u64, which: Stream, index: u64) -> u64 {
    mix(mix(seed ^ ((which as u64) << 56)).wrapping_add(index))
}
