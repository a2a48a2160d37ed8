//! Seeded random streams.
//!
//! The generator is ChaCha8 keyed by the seed, so streams are identical on
//! every platform. Normal draws use the Box–Muller transform; the
//! second value of each pair is cached and is part of the saved state.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl PartialEq for RngState {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.inner.get_word_pos() == other.inner.get_word_pos()
            && self.spare_normal.map(f64::to_bits) == other.spare_normal.map(f64::to_bits)
    }
}

/// Creates a fresh stream for `seed`.
pub fn seeded_rng(seed: u64) -> RngState {
    RngState::new(seed)
}

/// Draws `n` independent standard normals into a rank-1 tensor.
pub fn sample_standard_normal(rng: &mut RngState, n: usize) -> Tensor {
    assert!(n >= 1, "sample_standard_normal needs n >= 1");
    Tensor::vector((0..n).map(|_| rng.normal()).collect())
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this stream's seed and `tag`.
    pub fn derive(&self, tag: u64) -> RngState {
        RngState::new(mix_seed(self.seed, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` by rejection, so no modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `count` distinct indices from `0..n` in random order.
    pub fn sample_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(count);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = sample_standard_normal(&mut seeded_rng(42), 10);
        let b = sample_standard_normal(&mut seeded_rng(42), 10);
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(seeded_rng(42).normal(), seeded_rng(43).normal());
    }

    #[test]
    fn saved_state_continues_identically() {
        let mut rng = seeded_rng(42);
        for _ in 0..5 {
            rng.normal();
        }
        let mut saved = rng.clone();
        let tail: Vec<f64> = (0..7).map(|_| rng.normal()).collect();
        let resumed: Vec<f64> = (0..7).map(|_| saved.normal()).collect();
        assert_eq!(tail, resumed);
    }

    #[test]
    fn million_normals_have_unit_moments() {
        let draws = sample_standard_normal(&mut seeded_rng(7), 1_000_000);
        let mean = draws.mean();
        let var = draws.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn byte_identical_across_runs() {
        let bits = |s| -> Vec<u64> {
            sample_standard_normal(&mut seeded_rng(s), 64)
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(99), bits(99));
    }

    #[test]
    fn below_and_sample_indices_stay_in_range() {
        let mut rng = seeded_rng(1);
        for _ in 0..1000 {
            assert!(rng.below(7) < 7);
        }
        let mut picked = rng.sample_indices(20, 20);
        picked.sort_unstable();
        assert_eq!(picked, (0..20).collect::<Vec<_>>());
    }
}
