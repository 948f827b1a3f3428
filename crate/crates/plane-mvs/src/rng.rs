//! Deterministic RNG streams: every (image, pixel, stage, iteration) tuple
//! gets its own generator so results do not depend on thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent generator from a seed and a list of stream labels.
pub(crate) fn stream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ 0x243F_6A88_85A3_08D3);
    for &label in labels {
        state = splitmix64(state ^ label);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
