use rand_chacha::ChaCha8Rng;
// In no_std builds f64 math comes from the Float trait (libm); std test
// builds resolve the inherent methods instead and see this as unused.
#[allow(unused_imports)]
use num_traits::Float;
use rand_core::{RngCore, SeedableRng};

use crate::scalar::Scalar;

/// Deterministic random stream (ChaCha8). All randomness in the crate flows
/// through this type so that a seed fully determines parameters, synthetic
/// clips and crop choices, independent of platform and thread count.
#[derive(Clone, Debug)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    pub fn uniform<S: Scalar>(&mut self, lo: f64, hi: f64) -> S {
        S::of_f64(lo + (hi - lo) * self.uniform_f64())
    }

    /// Standard normal via Box-Muller. Draws two words per sample.
    pub fn normal_f64(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / 9007199254740992.0);
        let u2 = self.uniform_f64();
        (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
    }

    pub fn normal<S: Scalar>(&mut self, mean: f64, std: f64) -> S {
        S::of_f64(mean + std * self.normal_f64())
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo + 1) as usize) as i64
    }
}
