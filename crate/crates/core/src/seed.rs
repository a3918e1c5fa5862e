//! Sub-seed derivation. Every random stream in the crate is seeded with
//! `root ^ fnv1a64(tag)`, so adding a new stream never shifts existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn derive_seed(root: u64, tag: &str) -> u64 {
    root ^ fnv1a64(tag)
}

pub fn rng_for(root: u64, tag: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag))
}
