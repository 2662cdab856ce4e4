//! Seed fan-out and portable sampling helpers.
//!
//! Every command takes one root seed; all randomness is derived from
//! `(root, domain, index)` through a splitmix64 key schedule feeding a
//! counter-based ChaCha stream. Work items can therefore run in any order
//! (or in parallel) without changing results, and the same triple always
//! yields the same stream on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string, used to fold domain labels into the seed.
#[inline]
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derives an independent RNG for `(root, domain, index)`.
pub fn derive_rng(root: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut state = root ^ fnv1a(domain.as_bytes()) ^ index.wrapping_mul(GOLDEN_GAMMA);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derives a plain sub-seed, for handing a root to a nested component.
pub fn derive_seed(root: u64, domain: &str, index: u64) -> u64 {
    let mut state = root ^ fnv1a(domain.as_bytes()) ^ index.wrapping_mul(GOLDEN_GAMMA);
    splitmix64(&mut state)
}

/// Uniform sample in `[0, 1)` with 53 bits, identical across platforms.
#[inline]
pub fn next_uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform sample in `[lo, hi)`.
#[inline]
pub fn next_uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * next_uniform(rng)
}

/// Standard normal sample via Box-Muller.
#[inline]
pub fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    // u1 in (0, 1] so the log is finite.
    let u1 = 1.0 - next_uniform(rng);
    let u2 = next_uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_triple_same_stream() {
        let mut a = derive_rng(7, "init", 3);
        let mut b = derive_rng(7, "init", 3);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_domains_diverge() {
        let mut a = derive_rng(7, "init", 0);
        let mut b = derive_rng(7, "shuffle", 0);
        let same = (0..8).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 2);
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = derive_rng(1, "u", 0);
        for _ in 0..1000 {
            let x = next_uniform(&mut rng);
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn normal_moments_plausible() {
        let mut rng = derive_rng(2, "n", 0);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| next_normal(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
