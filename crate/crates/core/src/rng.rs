//! Seed-stream derivation.
//!
//! Every random draw in the toolkit comes from a ChaCha stream keyed by a
//! user seed plus a tuple of stream identifiers (spectrum index, tree index,
//! target name, ...). Streams never share state, so results do not depend on
//! the order in which work items are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Stream tags that keep independent uses of one `(seed, index)` pair apart.
pub mod tag {
    pub const PARAMETERS: u64 = 0x7061_7261_6d73;
    pub const BASELINE: u64 = 0x6261_7365;
    pub const LIPIDS: u64 = 0x6c69_7069_6473;
    pub const NOISE: u64 = 0x006e_6f69_7365;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const SPLITS: u64 = 0x0073_706c_6974;
    pub const KFOLD: u64 = 0x006b_666f_6c64;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of stream identifiers into one 64-bit seed.
pub fn derive_seed(seed: u64, ids: &[u64]) -> u64 {
    ids.iter()
        .fold(splitmix64(seed), |acc, &id| splitmix64(acc ^ splitmix64(id)))
}

pub fn stream(seed: u64, ids: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, ids))
}

/// FNV-1a, used to turn a target name into a stream identifier.
pub fn name_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
