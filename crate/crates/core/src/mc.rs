//! Monte Carlo plumbing: running moments, estimates and the seeded
//! chunked executor.
//!
//! A run of `n` samples is cut into `workers` contiguous chunks. Chunk `w`
//! draws from a ChaCha stream keyed by `(seed, stream_tag, w)` and keeps its
//! own Welford accumulator; chunks are merged in index order. The result
//! therefore depends on `(seed, workers)` only, not on thread scheduling or
//! on whether the `parallel` feature is enabled.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

/// Stream tags separating independent estimators that share a seed.
pub mod stream {
    pub const MAIN: u64 = 0;
    pub const NUMERATOR: u64 = 1;
    pub const DENOMINATOR: u64 = 2;
}

/// Stream `w` of family `tag` under `seed`.
pub fn rng_for(seed: u64, tag: u64, worker: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) | worker);
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise merge.
    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, f64>,
}

impl McEstimate {
    pub fn from_welford(w: &Welford, seed: u64) -> Self {
        Self { mean: w.mean, std_error: w.std_error(), n_samples: w.n, seed, metadata: BTreeMap::new() }
    }

    /// A deterministic value carried in estimate form.
    pub fn exact(mean: f64) -> Self {
        Self { mean, std_error: 0.0, n_samples: 0, seed: 0, metadata: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: f64) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }

    /// `|mean - target| <= k·std_error` (plus an absolute slack).
    pub fn agrees(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + slack
    }

    /// Ratio of two independent estimates with first-order error propagation.
    pub fn ratio(num: &McEstimate, den: &McEstimate) -> McEstimate {
        let mean = num.mean / den.mean;
        let rel_n = if num.mean != 0.0 { num.std_error / num.mean } else { 0.0 };
        let rel_d = den.std_error / den.mean;
        let std_error = if num.mean != 0.0 {
            mean.abs() * (rel_n * rel_n + rel_d * rel_d).sqrt()
        } else {
            num.std_error / den.mean.abs()
        };
        McEstimate {
            mean,
            std_error,
            n_samples: num.n_samples.min(den.n_samples),
            seed: num.seed,
            metadata: BTreeMap::new(),
        }
    }
}

/// How many chunks a run is split into and whether chunks may run on threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exec {
    pub workers: usize,
    pub threaded: bool,
}

impl Exec {
    pub fn new(workers: usize) -> Self {
        Self { workers: workers.max(1), threaded: cfg!(feature = "parallel") }
    }

    pub fn sequential(workers: usize) -> Self {
        Self { workers: workers.max(1), threaded: false }
    }

    fn chunk(&self, n: u64, w: usize) -> u64 {
        let k = self.workers as u64;
        n / k + u64::from((w as u64) < n % k)
    }

    /// Maps chunk indices to results, in order.
    pub fn map_chunks<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.threaded {
            use rayon::prelude::*;
            return (0..self.workers).into_par_iter().map(&f).collect();
        }
        (0..self.workers).map(f).collect()
    }

    /// Maps `0..n` to results, in order; used for deterministic independent work items.
    pub fn map_items<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.threaded && self.workers > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(&f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Runs `n` draws of a scalar sampler.
    pub fn run<F, E>(&self, n: u64, seed: u64, tag: u64, sample: F) -> Result<Welford, E>
    where
        F: Fn(&mut Rng) -> Result<f64, E> + Sync + Send,
        E: Send,
    {
        let parts = self.map_chunks(|w| {
            let mut rng = rng_for(seed, tag, w as u64);
            let mut acc = Welford::default();
            for _ in 0..self.chunk(n, w) {
                acc.push(sample(&mut rng)?);
            }
            Ok(acc)
        });
        let mut total = Welford::default();
        for p in parts {
            total.merge(&p?);
        }
        Ok(total)
    }

    /// Runs `n` draws of a vector-valued sampler (one accumulator per component).
    pub fn run_vec<F, E>(&self, n: u64, seed: u64, tag: u64, dim: usize, sample: F) -> Result<Vec<Welford>, E>
    where
        F: Fn(&mut Rng, &mut [f64]) -> Result<(), E> + Sync + Send,
        E: Send,
    {
        let parts = self.map_chunks(|w| {
            let mut rng = rng_for(seed, tag, w as u64);
            let mut acc = vec![Welford::default(); dim];
            let mut buf = vec![0.0; dim];
            for _ in 0..self.chunk(n, w) {
                buf.iter_mut().for_each(|b| *b = 0.0);
                sample(&mut rng, &mut buf)?;
                for (a, b) in acc.iter_mut().zip(&buf) {
                    a.push(*b);
                }
            }
            Ok(acc)
        });
        let mut total = vec![Welford::default(); dim];
        for p in parts {
            for (t, a) in total.iter_mut().zip(p?.iter()) {
                t.merge(a);
            }
        }
        Ok(total)
    }
}
