//! Deterministic counter-based generator.
//!
//! The stream for seed `s` is `mix(s + k * 0x9E37_79B9_7F4A_7C15)` for
//! `k = 1, 2, 3, ...` with wrapping arithmetic, where `mix` is the SplitMix64
//! finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//! z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! Uniform doubles take the top 53 bits: `(next_u64() >> 11) * 2^-53`, which
//! lies in `[0, 1)`. Nothing here depends on the platform, so golden files
//! produced from a seed are portable.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `lo..hi` (half-open). Panics if the range is empty.
    pub fn below(&mut self, hi: usize) -> usize {
        assert!(hi > 0, "empty range");
        // Lemire's multiply-shift; the bias is < 2^-64 * hi, irrelevant here.
        ((self.next_u64() as u128 * hi as u128) >> 64) as usize
    }

    pub fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + self.below(hi_inclusive - lo + 1)
    }

    /// Independent child stream. The child seed is a mix of this stream's seed
    /// and `stream`, so forking does not advance `self`.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(mix64(self.seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))))
    }
}
