//! Seeded sampling used by the numeric homogeneity and scaling checks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sampling domain for randomized checks.
///
/// States are drawn componentwise uniform in `[-state_bound, state_bound]`,
/// inputs in `[-input_bound, input_bound]`, and dilation parameters
/// log-uniform in `eps_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOptions {
    pub samples: usize,
    pub seed: u64,
    pub state_bound: f64,
    pub input_bound: f64,
    pub eps_range: (f64, f64),
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 0x5eed,
            state_bound: 2.0,
            input_bound: 2.0,
            eps_range: (0.1, 10.0),
        }
    }
}

impl SamplingOptions {
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_input_bound(mut self, bound: f64) -> Self {
        self.input_bound = bound;
        self
    }

    pub fn with_eps_range(mut self, lo: f64, hi: f64) -> Self {
        self.eps_range = (lo, hi);
        self
    }

    pub fn rng(&self) -> Sampler {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            opts: self.clone(),
        }
    }
}

pub struct Sampler {
    rng: ChaCha8Rng,
    opts: SamplingOptions,
}

impl Sampler {
    pub fn state(&mut self, dim: usize) -> Vec<f64> {
        let b = self.opts.state_bound;
        (0..dim).map(|_| self.rng.gen_range(-b..=b)).collect()
    }

    pub fn input(&mut self, dim: usize) -> Vec<f64> {
        let b = self.opts.input_bound;
        (0..dim).map(|_| self.rng.gen_range(-b..=b)).collect()
    }

    pub fn eps(&mut self) -> f64 {
        let (lo, hi) = self.opts.eps_range;
        self.rng.gen_range(lo.ln()..=hi.ln()).exp()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..=hi)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}
