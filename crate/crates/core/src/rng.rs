//! Portable seeded randomness.
//!
//! Every random decision in the crate (dataset split, network initialization,
//! mini-batch order, bootstrap draws, permutation shuffles, synthetic data)
//! goes through [`PortableRng`]: ChaCha8 seeded via `seed_from_u64`, with the
//! bounded draw and the shuffle written out here so the exact stream of
//! decisions is fixed independently of `rand`'s helper algorithms.
//!
//! Sub-streams are derived from one master seed with [`derive_seed`], so one
//! number reproduces a whole run and parallel work units never share a
//! generator.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod purpose {
    pub const SPLIT: u64 = 0x5350_4c49;
    pub const NN_INIT: u64 = 0x4e4e_494e;
    pub const NN_BATCH: u64 = 0x4e4e_4254;
    pub const RF_TREE: u64 = 0x5246_5452;
    pub const IMPORTANCE: u64 = 0x494d_5054;
    pub const SYNTH: u64 = 0x5359_4e54;
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(master, purpose, path...)`.
pub fn derive_seed(master: u64, purpose: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(purpose));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

#[derive(Debug, Clone)]
pub struct PortableRng {
    inner: ChaCha8Rng,
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn derived(master: u64, purpose: u64, path: &[u64]) -> Self {
        Self::new(derive_seed(master, purpose, path))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by rejection of the biased low zone.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates, walking from the last slot down to 1.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
