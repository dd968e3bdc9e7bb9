//! Deterministic hashing used to derive pseudorandom but reproducible
//! quantities (orthogonal embedding components, synthetic logits, arm values)
//! from a seed and a token sequence without storing tables.

use crate::seq::Token;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn mix(h: u64, v: u64) -> u64 {
    splitmix64(h ^ splitmix64(v.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn hash_tokens(h: u64, tokens: &[Token]) -> u64 {
    let mut h = mix(h, tokens.len() as u64);
    for &t in tokens {
        h = mix(h, t as u64);
    }
    h
}

/// Uniform in `[0, 1)` from the top 53 bits.
#[inline]
pub fn unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[-1, 1)`.
#[inline]
pub fn signed_unit(h: u64) -> f64 {
    2.0 * unit(h) - 1.0
}

/// Stable 64-bit hash of a string label, used to derive per-algorithm streams.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| mix(h, b as u64))
}
