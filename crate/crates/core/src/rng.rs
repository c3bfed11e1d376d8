//! Seeded random streams.
//!
//! Every seeded operation derives its generator from a `(seed, stream)` pair
//! so independent consumers of the same seed never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams so e.g. the K-shot sampler and the LoRA initializer of
/// one run draw from unrelated sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Windows = 1,
    Split = 2,
    FewShot = 3,
    Merge = 4,
    GeneralTasks = 5,
    ModelInit = 6,
    LoraInit = 7,
    Shuffle = 8,
    GradCheck = 9,
    Synthetic = 10,
}

pub fn seeded(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
