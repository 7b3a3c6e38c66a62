//! Counter-based hashing used for every random draw in the crate.
//!
//! Nothing here holds state: a draw is a pure function of its key, which is
//! what makes environments randomly accessible and runs independent of the
//! worker count.

use crate::lattice::Point;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(state: u64, word: u64) -> u64 {
    mix64(state.wrapping_add(GOLDEN) ^ word)
}

/// Hash of a space-time site `(time, level, x)` under `seed`.
#[inline]
pub fn hash_site(seed: u64, time: u64, level: u32, x: Point) -> u64 {
    hash_in_row(row_prefix(seed, time, level), x)
}

/// The part of [`hash_site`] that does not depend on `x`.
#[inline]
pub fn row_prefix(seed: u64, time: u64, level: u32) -> u64 {
    absorb(absorb(mix64(seed ^ 0x5EED_F1E1_D000_0001), time), level as u64)
}

#[inline]
pub fn hash_in_row(prefix: u64, x: Point) -> u64 {
    absorb(absorb(absorb(prefix, x.0[0] as u64), x.0[1] as u64), x.0[2] as u64)
}

/// Maps 64 random bits to a uniform in the open interval (0, 1).
#[inline]
pub fn unit_open(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Child seed for task `index` of kind `tag` under `base`.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let tag_hash = tag
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
    absorb(absorb(mix64(base), tag_hash), index)
}
