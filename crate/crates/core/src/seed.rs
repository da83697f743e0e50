//! Seed derivation. Every random decision draws from a ChaCha stream keyed by
//! `(run seed, stream tag[, index])`, so results never depend on call order
//! across independent consumers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const INIT: u64 = 0x01;
pub const TRAIN: u64 = 0x02;
pub const DEBIAS: u64 = 0x03;
pub const AUGMENT: u64 = 0x04;
pub const AUX_INIT: u64 = 0x05;
pub const SPLIT_TRAIN: u64 = 0x10;
pub const SPLIT_VAL: u64 = 0x11;
pub const SPLIT_TEST: u64 = 0x12;
pub const COLORS: u64 = 0x13;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn stream(seed: u64, tag: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive(seed, tag))
}

pub fn indexed(seed: u64, tag: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive(derive(seed, tag), index))
}
