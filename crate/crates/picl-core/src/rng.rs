//! Root-seeded named random streams.
//!
//! Every source of randomness in a run flows from one root seed through a
//! named sub-stream (`world`, `init`, `batch`, `augment`, `trials`), so any
//! component can be reproduced in isolation without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream name, folded into the root seed.
fn derive_seed(root: u64, name: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf29ce484222325;
    const FNV_PRIME: u64 = 0x100000001b3;
    let mut h = FNV_OFFSET ^ root.wrapping_mul(0x9e3779b97f4a7c15);
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic RNG for the named sub-stream of `root`.
pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name))
}
