//! Named, reproducible random substreams.
//!
//! Every stochastic routine in the crate derives its generator from a single
//! 64-bit seed and a short integer path (for example `[draw, config]`).
//! Distinct paths give statistically independent ChaCha streams, and the same
//! `(seed, path)` pair always yields the same stream, which is what makes
//! simulation outputs byte-identical across runs and worker counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    *state = z ^ (z >> 31);
}

/// Derive a generator for the substream identified by `path` under `seed`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    splitmix64(&mut state);
    for (depth, &p) in path.iter().enumerate() {
        state ^= p.wrapping_add(GAMMA.wrapping_mul(depth as u64 + 1));
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        splitmix64(&mut state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
