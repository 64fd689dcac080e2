//! Seeded random streams.
//!
//! Every random quantity is drawn from its own ChaCha8 stream whose 64-bit
//! seed is derived from `(root seed, purpose, a, b)` with a SplitMix64 mix.
//! Streams never share state, so results do not depend on evaluation order:
//!
//! | purpose          | a                    | b                    |
//! |------------------|----------------------|----------------------|
//! | `TRAIN_NOISE`    | optimization step    | Monte-Carlo sample   |
//! | `EVAL_NOISE`     | 0                    | Monte-Carlo sample   |
//! | `SHUFFLE`        | epoch                | 0                    |
//! | `INIT`           | 0                    | 0                    |
//! | `ENV_START`      | episode              | 0                    |
//! | `PERMUTATION`    | 0                    | 0                    |
//! | `ROLLOUT`        | 0                    | 0                    |
//! | `POLICY_NOISE`   | 0                    | Monte-Carlo sample   |
//!
//! `ROLLOUT` only yields the root seed of the `ENV_START` streams used by
//! evaluation rollouts, which keeps their start states apart from the
//! demonstration starts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Purpose(pub u64);

impl Purpose {
    pub const TRAIN_NOISE: Purpose = Purpose(0x01);
    pub const EVAL_NOISE: Purpose = Purpose(0x02);
    pub const SHUFFLE: Purpose = Purpose(0x03);
    pub const INIT: Purpose = Purpose(0x04);
    pub const ENV_START: Purpose = Purpose(0x05);
    pub const PERMUTATION: Purpose = Purpose(0x06);
    pub const ROLLOUT: Purpose = Purpose(0x07);
    pub const POLICY_NOISE: Purpose = Purpose(0x08);
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of an independent sub-stream.
pub fn derive_seed(root: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(root);
    h = splitmix64(h ^ purpose.0);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream(root: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, a, b))
}
