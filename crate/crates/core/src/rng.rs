//! Counter-based random streams.
//!
//! Every stream is keyed by `(global_seed, step, prompt, worker)` and owns its
//! own ChaCha key, so any step can be replayed without carrying generator
//! state around.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Step value reserved for frontier precomputation draws.
pub const PRECOMPUTE_STEP: u64 = u64::MAX;
/// Step value reserved for the fixed evaluation noise.
pub const EVAL_STEP: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub step: u64,
    pub prompt: u64,
    pub worker: u64,
}

impl StreamKey {
    pub fn new(seed: u64, step: u64, prompt: u64, worker: u64) -> Self {
        Self {
            seed,
            step,
            prompt,
            worker,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (chunk, v) in
            key.chunks_exact_mut(8)
                .zip([self.seed, self.step, self.prompt, self.worker])
        {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

pub fn stream(seed: u64, step: u64, prompt: u64, worker: u64) -> ChaCha8Rng {
    StreamKey::new(seed, step, prompt, worker).rng()
}
