//! Seed plumbing. Every stochastic step draws from a ChaCha stream derived
//! from the experiment seed plus a stable label, so results never depend on
//! iteration order or thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives an independent seed from `seed` and a textual label (FNV-1a).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn derive_seed_index(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Inverse-CDF draw from unnormalized non-negative weights.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_positive = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "pair-1"), derive_seed(7, "pair-1"));
        assert_ne!(derive_seed(7, "pair-1"), derive_seed(7, "pair-2"));
        assert_ne!(derive_seed(7, "pair-1"), derive_seed(8, "pair-1"));
    }

    #[test]
    fn categorical_never_picks_zero_weight() {
        let mut rng = seeded(3);
        for _ in 0..10_000 {
            let k = sample_categorical(&[0.0, 0.3, 0.0, 0.7, 0.0], &mut rng);
            assert!(k == 1 || k == 3);
        }
    }
}
