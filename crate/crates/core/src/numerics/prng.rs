//! Seeded pseudo-random streams.
//!
//! [`Prng`] wraps xoshiro256++ (state seeded from a 64-bit seed through
//! SplitMix64). Child streams are derived from `(seed, domain, id)` by a
//! SplitMix64 finalizer, so a child depends only on its parent's seed and
//! its id, never on how many numbers the parent has produced:
//!
//! * [`Prng::stream`] is keyed and side-effect free; record `i` of a
//!   dataset draws from `root.stream(i)` and so the output does not depend
//!   on worker count or scheduling.
//! * [`Prng::split`] hands out successive children from an internal
//!   counter.
//!
//! Streams are reproducible within this implementation; no cross-language
//! bit equality is promised.

use rand::Rng;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const STREAM_DOMAIN: u64 = 0x5851_F42D_4C95_7F2D;
const SPLIT_DOMAIN: u64 = 0x1405_7B7E_F767_814F;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive(seed: u64, domain: u64, id: u64) -> u64 {
    splitmix64(seed ^ splitmix64(domain.wrapping_add(splitmix64(id))))
}

#[derive(Debug, Clone)]
pub struct Prng {
    seed: u64,
    splits: u64,
    inner: Xoshiro256PlusPlus,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            splits: 0,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Keyed child stream. Does not advance `self`.
    pub fn stream(&self, id: u64) -> Prng {
        Prng::new(derive(self.seed, STREAM_DOMAIN, id))
    }

    /// Next child stream from the split counter.
    pub fn split(&mut self) -> Prng {
        let child = derive(self.seed, SPLIT_DOMAIN, self.splits);
        self.splits += 1;
        Prng::new(child)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Index drawn with probability proportional to `weights`.
    ///
    /// Consumes exactly one uniform draw.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        let target = self.uniform() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return i;
            }
        }
        // rounding can leave target == total; fall back to the last positive weight
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Prng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
