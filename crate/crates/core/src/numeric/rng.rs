//! Seeded, platform-independent random source.
//!
//! Backed by ChaCha8. A generator is identified by `(seed, stream)`; parallel
//! or per-item consumers derive their own generator with [`Rng::split`],
//! which keeps the seed and selects a different ChaCha stream. Two
//! generators with the same `(seed, stream)` and word position produce the
//! same draws on every platform.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

/// Serializable position of an [`Rng`], enough to resume its sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    /// Independent generator for `stream` under the same seed, starting at
    /// the beginning of that stream regardless of how far `self` has advanced.
    pub fn split(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = Self::with_stream(state.seed, state.stream);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::param(format!("uniform: need finite lo < hi, got [{lo}, {hi})")));
        }
        let x = lo + (hi - lo) * self.next_f64();
        // Rounding can land exactly on `hi` for wide ranges.
        Ok(if x < hi { x } else { lo })
    }

    /// Box-Muller on two uniforms from this stream; the sine branch is discarded.
    pub fn normal(&mut self, mean: f64, std: f64) -> Result<f64> {
        if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::param(format!(
                "normal: need finite mean and std >= 0, got std={std}"
            )));
        }
        Ok(mean + std * self.standard_normal())
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in `[0, n)`.
    pub fn choice(&mut self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(Error::param("choice: n must be >= 1"));
        }
        Ok(self.below(n))
    }

    #[inline]
    pub(crate) fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n as u64) as usize
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub(crate) fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn weighted_index(&mut self, weights: &[f64]) -> Result<usize> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || total <= 0.0 {
            return Err(Error::param(
                "weighted_index: weights must be nonnegative with positive sum",
            ));
        }
        let mut x = self.next_f64() * total;
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return Ok(i);
            }
            x -= w;
        }
        Ok(weights.iter().rposition(|w| *w > 0.0).unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        let xs: Vec<f64> = (0..1000).map(|_| a.next_f64()).collect();
        let ys: Vec<f64> = (0..1000).map(|_| b.next_f64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn choice_of_one() {
        let mut r = Rng::new(1);
        for _ in 0..10 {
            assert_eq!(r.choice(1).unwrap(), 0);
        }
    }

    #[test]
    fn uniform_mean() {
        let mut r = Rng::new(42);
        let n = 100_000;
        let mean = (0..n).map(|_| r.uniform(0.0, 1.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let mut r = Rng::new(3);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal(1.0, 2.0).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
        assert!((var - 4.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn invalid_ranges() {
        let mut r = Rng::new(0);
        assert!(r.uniform(1.0, 1.0).is_err());
        assert!(r.uniform(2.0, 1.0).is_err());
        assert!(r.normal(0.0, -1.0).is_err());
        assert!(r.choice(0).is_err());
    }

    #[test]
    fn split_streams_differ_and_are_reproducible() {
        let base = Rng::new(9);
        let mut a = base.split(1);
        let mut b = base.split(2);
        let mut a2 = Rng::new(9).split(1);
        let xa: Vec<f64> = (0..8).map(|_| a.next_f64()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.next_f64()).collect();
        let xa2: Vec<f64> = (0..8).map(|_| a2.next_f64()).collect();
        assert_ne!(xa, xb);
        assert_eq!(xa, xa2);
    }

    #[test]
    fn state_round_trip_resumes_sequence() {
        let mut r = Rng::with_stream(5, 11);
        for _ in 0..37 {
            r.next_f64();
        }
        let mut resumed = Rng::from_state(r.state());
        for _ in 0..100 {
            assert_eq!(r.next_f64().to_bits(), resumed.next_f64().to_bits());
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut r = Rng::new(4);
        let mut v: Vec<usize> = (0..50).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
