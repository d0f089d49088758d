//! Deterministic, splittable random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha stream keyed by a
//! tuple of integers (seed, step, ray, purpose, ...). Streams do not depend
//! on scheduling order, so results are identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes get their own stream so that enabling one feature never shifts
/// the draws of another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    RaySelect = 1,
    Stratified = 2,
    FineResample = 3,
    EmdQuantiles = 4,
    Dropout = 5,
    Init = 6,
    Scene = 7,
    Corruption = 8,
    Trajectory = 9,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of keys into one 64-bit value.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x6A09_E667_F3BC_C908u64, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Stateless counter-based hash: the `index`-th value of the sequence
/// identified by `base`. Used where one generator draw per element would be
/// too slow (dropout masks).
#[inline]
pub fn counter(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

/// A fresh generator for the given key path.
pub fn stream(seed: u64, purpose: Purpose, keys: &[u64]) -> ChaCha8Rng {
    let mut all = Vec::with_capacity(keys.len() + 2);
    all.push(seed);
    all.push(purpose as u64);
    all.extend_from_slice(keys);
    ChaCha8Rng::seed_from_u64(mix(&all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = stream(7, Purpose::Stratified, &[1, 2]).random();
        let b: f64 = stream(7, Purpose::Stratified, &[1, 2]).random();
        let c: f64 = stream(7, Purpose::Stratified, &[2, 1]).random();
        let d: f64 = stream(7, Purpose::Dropout, &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
