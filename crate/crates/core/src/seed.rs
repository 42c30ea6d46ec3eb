//! Seed derivation helpers. Every stochastic draw in the crate goes through a
//! ChaCha stream keyed by a mixed 64-bit seed, so runs replay bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finaliser.
pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn mix(a: u64, b: u64) -> u64 {
    splitmix(a ^ splitmix(b).rotate_left(17))
}

pub fn mix3(a: u64, b: u64, c: u64) -> u64 {
    mix(mix(a, b), c)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags, so independent consumers of one seed never share draws.
pub mod stream {
    pub const WORLD_INIT: u64 = 0x5749_4e49;
    pub const WALK_PLAN: u64 = 0x5741_4c4b;
    pub const RENDER: u64 = 0x5245_4e44;
    pub const DEGRADE: u64 = 0x4445_4752;
    pub const SCENE: u64 = 0x5343_454e;
    pub const SWAP: u64 = 0x5357_4150;
    pub const ENRICH: u64 = 0x454e_5249;
    pub const MODEL_INIT: u64 = 0x4d49_4e49;
    pub const SHUFFLE: u64 = 0x5348_5546;
}
