//! Counter-based random numbers and seed derivation.
//!
//! Every random quantity in the crate is a pure function of a 64-bit key, so
//! results do not depend on evaluation order or thread scheduling.

use crate::specfun;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 / MurmurHash3 finalizer. A bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a sequence of words into one 64-bit key.
#[inline]
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c908u64;
    for &w in words {
        h = mix64(h.wrapping_add(GOLDEN) ^ mix64(w.wrapping_add(GOLDEN)));
    }
    h
}

/// Derive an independent seed from a master seed and a role tag such as
/// `"fit.restart.3"` or `"bench.rep.17"`.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash_words(&[master, h])
}

/// 32 random bits keyed by `(seed, replicate, index, dim)`.
#[inline]
pub fn counter_bits(seed: u64, replicate: u64, index: u64, dim: u64) -> u32 {
    (hash_words(&[seed, replicate, index, dim]) >> 32) as u32
}

/// A small sequential generator (SplitMix64) for places where a stream is
/// more natural than a counter, e.g. synthetic data and init jitter.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform on the open interval (0, 1).
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion.
    pub fn normal(&mut self) -> f64 {
        specfun::norm_icdf(self.next_open01()).expect("open interval")
    }
}
