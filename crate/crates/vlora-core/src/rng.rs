//! Seeded deterministic random number generation.
//!
//! All randomness in the crate flows through [`Rng`], a thin wrapper around
//! ChaCha8 keyed by a 64-bit seed. ChaCha8's output stream is specified by
//! the algorithm itself, so the same seed produces bit-identical parameter
//! initializations and data sets on every platform and in every build.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Deterministic generator: ChaCha8 keyed by a 64-bit seed.
///
/// Uniform doubles take the top 53 bits of one `u64` draw; normal samples
/// use the Box-Muller transform on two uniform draws (no caching, so the
/// draw count per sample is fixed).
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Normal draw with mean 0 and the given standard deviation.
    pub fn normal(&mut self, std: f64) -> f64 {
        // Box-Muller; 1 - u lies in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = num_traits::Float::sqrt(-2.0 * num_traits::Float::ln(u1));
        let angle = 2.0 * core::f64::consts::PI * u2;
        std * radius * num_traits::Float::cos(angle)
    }

    /// Uniform integer in `[0, bound)`. `bound` must be nonzero. The modulo
    /// bias is below 2^-57 for the bounds used here (alphabets, indices).
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
