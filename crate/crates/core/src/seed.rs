//! Seed derivation.
//!
//! Every random stream in a run comes from `(base seed, stream id)` through
//! [`derive`], a SplitMix64 finalizer over `base ^ (stream * golden)`. The mixing
//! rule is part of the reproducibility contract: changing it changes every run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream ids. Per-item streams add the item index to the family base.
pub mod streams {
    pub const EXPERT_INIT: u64 = 0x1000;
    pub const GATE_INIT: u64 = 0x2000;
    pub const COMBINER_INIT: u64 = 0x3000;
    pub const SHUFFLE: u64 = 0x4000_0000;
    pub const DROPOUT: u64 = 0x5000_0000;
    pub const CROPS: u64 = 0x6000_0000;
    pub const SYNTH_SCENE: u64 = 0x7000_0000;
    pub const KFOLD: u64 = 0x8000_0000;
    pub const FOLD_TRAIN: u64 = 0x9000_0000;
}

pub fn derive(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(GOLDEN);
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, stream))
}
