//! Seeded random streams.
//!
//! Every estimator takes an explicit 64-bit seed. Replicates and workers get
//! their own ChaCha stream so that results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EvidenceRng = ChaCha8Rng;

/// Root stream for a seed.
pub fn rng_from_seed(seed: u64) -> EvidenceRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> EvidenceRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
