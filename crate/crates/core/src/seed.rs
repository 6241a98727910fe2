//! Seed derivation. Every stochastic operation draws from a generator keyed by
//! `(global seed, sample id, tag)`, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a global seed with a sample id and a tag (usually a variant label).
pub fn derive_seed(global: u64, sample_id: &str, tag: &str) -> u64 {
    let mut h = mix64(global ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ fnv1a(sample_id.as_bytes()));
    mix64(h ^ fnv1a(tag.as_bytes()).rotate_left(17))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
