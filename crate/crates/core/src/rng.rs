//! Seeded deterministic generators used everywhere randomness is needed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EngineRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> EngineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream derived from a base seed, e.g. one per epoch.
pub fn derived(seed: u64, stream: u64) -> EngineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
