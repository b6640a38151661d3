//! Index-keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is the tuple
//! `(master_seed, a, b, c)`, so the stream for a given work item depends only
//! on its indices and never on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// The stream keyed by `(master_seed, a, b, c)`.
pub fn keyed_stream(master_seed: u64, a: u64, b: u64, c: u64) -> StreamRng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([master_seed, a, b, c]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Generator for seed-only constructions such as reference pools.
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
