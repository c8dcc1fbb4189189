//! Seeded, splittable random streams.
//!
//! Backed by ChaCha8, which is counter based and exposes a 64-bit stream id:
//! `(seed, stream)` fully determines the sequence on every platform. Work that
//! runs in parallel forks its own stream instead of sharing one generator.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::error::{Result, UqError};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream identified by `tag`. Does not advance `self`.
    pub fn fork(&self, tag: u64) -> Rng {
        Rng::new(self.seed, mix(self.stream, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// Stream id for a child derived from `(parent, tag)`.
pub fn mix(parent: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ tag.rotate_left(17) ^ 0xA076_1D64_78BD_642F)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    Normal { mu: f64, sigma: f64 },
}

/// Draws an i.i.d. tensor of the given shape.
pub fn sample(rng: &mut Rng, dist: Distribution, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data = match dist {
        Distribution::Uniform { low, high } => {
            if !(low.is_finite() && high.is_finite()) || low > high {
                return Err(UqError::Parameter(format!(
                    "uniform({low}, {high}) needs finite low <= high"
                )));
            }
            (0..n).map(|_| low + (high - low) * rng.uniform()).collect()
        }
        Distribution::Normal { mu, sigma } => {
            if !(mu.is_finite() && sigma.is_finite()) || sigma < 0.0 {
                return Err(UqError::Parameter(format!(
                    "normal({mu}, {sigma}) needs finite mu and sigma >= 0"
                )));
            }
            (0..n).map(|_| mu + sigma * rng.standard_normal()).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}
