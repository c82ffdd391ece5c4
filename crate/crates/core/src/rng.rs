use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Portable seeded generator; the ChaCha stream is identical on every platform.
pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for sub-task `index` of a seeded job (restarts, etc).
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    if index == 0 {
        seed
    } else {
        seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
    }
}
