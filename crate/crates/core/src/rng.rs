//! Portable seeded random streams.
//!
//! Every sampling routine in the crate draws from [`Xoshiro256PlusPlus`]
//! seeded through SplitMix64, and every derived quantity (uniform doubles,
//! bounded integers, shuffles, normals) is computed by the helpers below
//! rather than by a general-purpose sampling library. The full recipe is:
//!
//! * sub-seed for `(master, stream, index)`:
//!   `mix64(mix64(master ^ mix64(stream)) ^ mix64(index.wrapping_add(GOLDEN)))`
//!   where `mix64` is the SplitMix64 finalizer;
//! * generator: `Xoshiro256PlusPlus::seed_from_u64(sub_seed)`;
//! * uniform double: `(next_u64() >> 11) * 2^-53`, in [0, 1);
//! * integer below `n`: Lemire's multiply-shift with rejection;
//! * shuffle: Fisher–Yates from the last index down;
//! * standard normal: Box–Muller, cosine branch only.
//!
//! Parallel loops give iteration `i` the stream `substream(master, tag, i)`,
//! so results do not depend on the thread count.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit tag for a stream name (FNV-1a).
pub fn tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(stream)) ^ mix64(index.wrapping_add(GOLDEN)))
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256PlusPlus,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn substream(master: u64, stream: &str, index: u64) -> Self {
        Self::new(derive_seed(master, tag(stream), index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform double in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1]
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Index drawn from a discrete distribution given by non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        // rounding can leave u marginally above the last bucket
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// Triangular draw on [min, max] with the given mode (inverse CDF).
    pub fn triangular(&mut self, min: f64, max: f64, mode: f64) -> f64 {
        if max <= min {
            return min;
        }
        let u = self.uniform();
        let cut = (mode - min) / (max - min);
        if u < cut {
            min + (u * (max - min) * (mode - min)).sqrt()
        } else {
            max - ((1.0 - u) * (max - min) * (max - mode)).sqrt()
        }
    }
}
