//! Deterministic random number generation.
//!
//! Every random draw in this crate flows through [`SplitMix64`] so that a
//! seed fixes the entire behaviour of a run bit-exactly, on every platform.
//! Reimplementations in other languages must reproduce the exact update and
//! output functions below to interoperate with recorded runs.
//!
//! Derived streams are built with [`stream`]: a `(seed, domain, a, b)` tuple
//! names a substream, so e.g. the augmentation draws for sample 17 in epoch 3
//! can be replayed in isolation without running anything else.

/// Stream domain tags. Each independent consumer of randomness gets its own
/// domain so adding draws in one place never shifts another.
pub mod domain {
    pub const SHUFFLE: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const VERIFY: u64 = 6;
}

/// The splitmix64 generator: 64-bit state, additive constant
/// `0x9E3779B97F4A7C15`, output mixed by two xor-shift-multiply rounds.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

/// The splitmix64 output mix, also used standalone to derive stream seeds.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` via the fixed-point multiply reduction
    /// (one draw, no rejection loop, negligible bias for desk-scale `n`).
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal via Box-Muller. One output per two uniform draws;
    /// the sine branch is discarded to keep the draw count per call fixed.
    pub fn next_gaussian(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, sigma: f64) -> f64 {
        mean + sigma * self.next_gaussian()
    }

    /// In-place Fisher-Yates shuffle (descending index, `below(i + 1)`).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Derive the generator for substream `(domain, a, b)` of `seed`.
///
/// The derivation chains the output mix: `mix(mix(mix(seed ^ D) ^ a) ^ b)`
/// where `D` is the domain tag. Any change here breaks replay compatibility.
pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> SplitMix64 {
    let s = mix64(mix64(mix64(seed ^ domain.wrapping_mul(0xA076_1D64_78BD_642F)) ^ a) ^ b);
    SplitMix64::new(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vectors_seed_zero() {
        // Reference outputs of splitmix64 for seed 0.
        let mut r = SplitMix64::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = SplitMix64::new(1234);
        let mut b = SplitMix64::new(1234);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn unit_interval_bounds() {
        let mut r = SplitMix64::new(7);
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn below_is_in_range() {
        let mut r = SplitMix64::new(9);
        for n in [1u64, 2, 3, 10, 1000] {
            for _ in 0..200 {
                assert!(r.below(n) < n);
            }
        }
    }

    #[test]
    fn streams_are_independent() {
        let a: Vec<u64> = (0..8).map(|i| stream(1, domain::AUGMENT, 0, i).next_u64()).collect();
        let b: Vec<u64> = (0..8).map(|i| stream(1, domain::AUGMENT, 1, i).next_u64()).collect();
        let c: Vec<u64> = (0..8).map(|i| stream(1, domain::SHUFFLE, 0, i).next_u64()).collect();
        assert_ne!(a, b);
        assert_ne!(a, c);
        // Replaying a substream reproduces it exactly.
        let again: Vec<u64> = (0..8).map(|i| stream(1, domain::AUGMENT, 0, i).next_u64()).collect();
        assert_eq!(a, again);
    }

    #[test]
    fn gaussian_moments_are_sane() {
        let mut r = SplitMix64::new(42);
        let n = 50_000;
        let samples: Vec<f64> = (0..n).map(|_| r.next_gaussian()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
