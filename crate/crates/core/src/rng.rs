//! Reproducible, independent random streams.
//!
//! Every stream is a ChaCha8 keystream selected by `(seed, domain, index)`.
//! ChaCha is counter based, so any stream can be regenerated on its own
//! without replaying the others; this is what lets scenario `k` be rebuilt
//! in isolation and lets parallel workers draw without coordination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Streams from different domains never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Shuffle = 2,
    MonteCarlo = 3,
    ScenarioIndex = 4,
    Forward = 5,
    Reverse = 6,
    Permutation = 7,
}

const INDEX_BITS: u32 = 56;

/// The stream for `(seed, domain, index)`; `index` must be below 2^56.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    assert!(index < 1 << INDEX_BITS, "stream index {index} too large");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << INDEX_BITS) | index);
    rng
}
