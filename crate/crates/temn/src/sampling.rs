//! Seeded sampling helpers shared by the generator, the Gibbs sampler and
//! the evaluation protocol.

use rand::Rng;

/// Draw an index proportionally to the given non-negative weights.
///
/// Weights need not be normalised; the total must be positive.
pub fn categorical<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0 && total.is_finite(), "bad categorical weights");
    let mut target = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        target -= w;
        if target < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// splitmix64 step; a stable, portable way to derive sub-seeds.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Combine a seed with a string label (FNV-1a) into a new seed.
///
/// Used wherever a run seed has to be fanned out into independent,
/// reproducible streams (negative sampling per event, sub-stages of a run).
pub fn mix_seed_str(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(seed ^ h)
}

/// Combine a seed with an integer into a new seed.
pub fn mix_seed_u64(seed: u64, value: u64) -> u64 {
    mix64(seed ^ mix64(value))
}
