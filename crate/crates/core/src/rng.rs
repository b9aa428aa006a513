//! Seed derivation. Every consumer of randomness gets its own generator
//! keyed by `(seed, purpose)`, so reusing one seed across data generation,
//! splitting and initialization never replays the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn seeded(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
