//! Seed derivation.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] seeded by
//! `derive_seed(master, label)`. Streams are addressed by label, never by the
//! order in which they are requested, so sequential and parallel runs see the
//! same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream label into a substream seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(master) ^ h)
}

/// Like [`derive_seed`] with an integer suffix, e.g. `("path", 3)`.
pub fn derive_indexed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive_seed(master, label) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(master: u64, label: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, label))
}

pub fn indexed_stream(master: u64, label: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_indexed(master, label, index))
}
