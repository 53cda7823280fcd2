//! Counter-based pseudo-random number generator.
//!
//! Every random quantity in this crate (weights, sample locations, dataset
//! initial conditions, trial draws) comes from this generator so that runs
//! are reproducible from a single seed, and so that the stream can be
//! re-derived in any language from the description below.
//!
//! The word stream is the SplitMix64 finalizer applied to a keyed counter:
//!
//! ```text
//! word(i) = mix(key + (i + 1) * 0x9E3779B97F4A7C15)          (wrapping)
//! mix(z):  z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!          z ^= z >> 27; z *= 0x94D049BB133111EB;
//!          z ^= z >> 31
//! ```
//!
//! Uniform doubles take the top 53 bits: `(word >> 11) * 2^-53` in `[0, 1)`.
//! Gaussian variates use the Box-Muller transform on `u1 in (0, 1]`
//! (`((word >> 11) + 1) * 2^-53`) and `u2 in [0, 1)`, returning
//! `sqrt(-2 ln u1) cos(2 pi u2)` first and caching the `sin` companion.
//!
//! Streams for distinct purposes derive from the master seed through fixed
//! labels: `split("weights")`, `split("samples")`, `split("data")`, and so
//! on, with `split_index(i)` for per-sample / per-trial sub-streams. A child
//! key is `mix(key ^ mix(label_hash))` where `label_hash` is FNV-1a over the
//! label bytes, or `mix(key ^ mix(i * 0x9E3779B97F4A7C15 ^ SALT))` for an
//! index.

use std::f64::consts::TAU;

const GOLDEN: u64 = 0x9E3779B97F4A7C15;
const INDEX_SALT: u64 = 0x5851F42D4C957F2D;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF29CE484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001B3);
    }
    h
}

/// Deterministic counter-based generator with labeled sub-streams.
#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    counter: u64,
    cached_gaussian: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            key: seed,
            counter: 0,
            cached_gaussian: None,
        }
    }

    /// Child stream for a distinct purpose. Independent of how many words
    /// the parent has consumed.
    pub fn split(&self, label: &str) -> Rng {
        Rng::new(mix(self.key ^ mix(fnv1a(label.as_bytes()))))
    }

    /// Child stream for an indexed unit of work (sample, trial, epoch).
    pub fn split_index(&self, index: u64) -> Rng {
        Rng::new(mix(self.key ^ mix(index.wrapping_mul(GOLDEN) ^ INDEX_SALT)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, unbiased by rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let cap = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < cap {
                return x % n;
            }
        }
    }

    /// Standard normal scaled by `stddev`, via Box-Muller.
    pub fn gaussian(&mut self, stddev: f64) -> f64 {
        if let Some(z) = self.cached_gaussian.take() {
            return z * stddev;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = TAU * u2;
        self.cached_gaussian = Some(r * theta.sin());
        r * theta.cos() * stddev
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `n` distinct indices drawn uniformly from `0..g` (partial
    /// Fisher-Yates), returned sorted ascending.
    pub fn sample_without_replacement(&mut self, g: usize, n: usize) -> Vec<usize> {
        assert!(n <= g, "cannot draw {n} from {g}");
        let mut pool: Vec<usize> = (0..g).collect();
        for i in 0..n {
            let j = i + self.below((g - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(n);
        pool.sort_unstable();
        pool
    }
}
