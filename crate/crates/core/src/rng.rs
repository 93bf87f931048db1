//! Reproducible random streams.
//!
//! Every random quantity in the tracker is drawn from an [`RngStream`], a
//! ChaCha8 keystream keyed by a 64-bit seed and selected by a stream id.
//! ChaCha is counter-based and defined purely in terms of 32-bit integer
//! arithmetic, so a `(seed, stream)` pair produces the same sequence on
//! every platform. Normal variates use the Box–Muller transform over
//! 53-bit uniforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Well-known stream ids. Each consumer of randomness gets its own stream
/// so that, e.g., changing the number of training iterations does not
/// perturb candidate sampling.
pub mod streams {
    pub const CANDIDATES: u64 = 1;
    pub const EXAMPLES: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const INIT_WEIGHTS: u64 = 4;
    pub const BBR_PROPOSALS: u64 = 5;
    pub const SYNTH: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        // Fixed tag in the remaining key bytes keeps seed 0 usable.
        key[8..16].copy_from_slice(&0x7472_6565_7472_6b31u64.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    /// Derives an independent stream, e.g. one per sequence or per node.
    pub fn derive(&self, sub: u64) -> Self {
        Self::new(
            self.seed ^ sub.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            self.stream.wrapping_mul(31).wrapping_add(sub),
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal variate via Box–Muller; the second value of each
    /// pair is kept for the next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so ln is finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.normal()
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
