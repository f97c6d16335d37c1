//! Counter-based pseudorandom numbers.
//!
//! Every random number is a pure function of `(seed, pixel, sample, bounce,
//! dimension)`, so any path can be replayed exactly from its identifier
//! without storing generator state.

/// Final avalanche step of SplitMix64.
#[inline]
pub const fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
const fn combine(h: u64, v: u64) -> u64 {
    splitmix64(h ^ v.wrapping_add(0x9E37_79B9_7F4A_7C15))
}

/// Stream selectors for random numbers that are not part of a path's
/// light transport.
pub mod stream {
    pub const PATH: u64 = 0;
    pub const JITTER_ACCUMULATE: u64 = 1;
    pub const JITTER_LOOKUP: u64 = 2;
    pub const JITTER_COARSE: u64 = 3;
}

/// Keyed generator for a single path (or a single jitter stream of a path).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, pixel_index: u64, sample: u64, stream: u64) -> Self {
        let mut key = combine(0x243F_6A88_85A3_08D3, seed);
        key = combine(key, pixel_index);
        key = combine(key, sample);
        key = combine(key, stream);
        Self { key }
    }

    #[inline]
    pub fn bits(&self, bounce: u32, dimension: u32) -> u64 {
        combine(self.key, ((bounce as u64) << 32) | dimension as u64)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&self, bounce: u32, dimension: u32) -> f64 {
        (self.bits(bounce, dimension) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform2(&self, bounce: u32, dimension: u32) -> (f64, f64) {
        (self.uniform(bounce, dimension), self.uniform(bounce, dimension + 1))
    }
}
