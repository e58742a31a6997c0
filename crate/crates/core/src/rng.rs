//! Deterministic seeded randomness.
//!
//! The generator is SplitMix64: state advances by the 64-bit golden-ratio
//! constant and each output is the finalizer mix of the new state. It is
//! integer-only, so a given seed produces the same stream on every platform,
//! which makes frame subsampling and weight initialization reproducible.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 stream seeded with a 64-bit value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    state: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> SeededRng {
        SeededRng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`. `n` must be nonzero.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal draw via Box–Muller. Consumes two uniform draws per
    /// call; the sine branch is discarded so the stream position stays a
    /// simple function of the call count.
    pub fn normal_f32(&mut self) -> f32 {
        // Shift into (0, 1] so the log argument is never zero.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        let r = crate::math::sqrt64(-2.0 * crate::math::ln64(u1));
        (r * crate::math::cos64(2.0 * core::f64::consts::PI * u2)) as f32
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Derives an independent stream seed from a base seed and a stream index.
///
/// Defined as `mix64(seed ^ (index + 1) · GOLDEN)` with the SplitMix64
/// finalizer, so run `r` of a repeated-sampling loop sees the same
/// subsample no matter how many other runs execute or in what order.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ stream.wrapping_add(1).wrapping_mul(GOLDEN))
}
