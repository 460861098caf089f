//! Seedable 64-bit generator used everywhere randomness is needed.
//!
//! The stream is xoshiro256++ with its 256-bit state filled by four
//! consecutive SplitMix64 outputs of the seed. Derived quantities are
//! defined on top of `next_u64` so other implementations can reproduce
//! every draw bit for bit:
//!
//! * `uniform()` = `(next_u64() >> 11) * 2^-53`, in `[0, 1)`.
//! * `normal()` = Box–Muller cosine branch,
//!   `sqrt(-2 ln(1 - u1)) * cos(2π u2)`, one pair of uniforms per draw.
//! * `split()` seeds a child generator with the parent's next output.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Stream-offset multiplier for [`Rng64::with_stream`] (the golden-ratio
/// constant SplitMix64 also uses).
const STREAM_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng64 {
    inner: Xoshiro256PlusPlus,
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent generator for sub-stream `stream` of `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self::new(seed ^ stream.wrapping_add(1).wrapping_mul(STREAM_MIX))
    }

    /// Child generator seeded from this generator's next output.
    pub fn split(&mut self) -> Self {
        Self::new(self.next_u64())
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`.
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let r = (-2.0 * self.uniform_open0().ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * self.uniform();
        r * theta.cos()
    }

    /// Uniform integer in `0..n` (Lemire-free modulo reduction; bias is
    /// below 2^-50 for the small `n` used here).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}
