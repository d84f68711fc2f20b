//! Seed derivation and deterministic sampling helpers.
//!
//! Every stochastic routine in the crate takes an explicit `u64` seed and
//! builds its own [`ChaCha8Rng`], so results are reproducible across runs and
//! platforms. Seeds for subtasks are derived from a root seed and a string
//! key via FNV-1a, which keeps task outcomes independent of scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a subtask seed from a root seed and a textual key.
pub fn derive_seed(root: u64, key: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + key.len());
    buf.extend_from_slice(&root.to_le_bytes());
    buf.extend_from_slice(key.as_bytes());
    fnv1a(&buf)
}

/// Fresh deterministic generator for the given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Sample `m` distinct values from `0..n` via partial Fisher-Yates.
/// Returned order is the draw order (not sorted).
pub fn sample_without_replacement(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    assert!(m <= n, "cannot sample {m} from {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool
}
