//! Small streaming statistics helpers.

use serde::{Deserialize, Serialize};

/// Welford accumulator for mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Running {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn estimate(&self) -> MeanEstimate {
        MeanEstimate {
            mean: self.mean,
            std_err: if self.count == 0 {
                f64::INFINITY
            } else {
                self.std_dev() / (self.count as f64).sqrt()
            },
            samples: self.count,
        }
    }
}

impl FromIterator<f64> for Running {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Running::new();
        iter.into_iter().for_each(|v| acc.push(v));
        acc
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl MeanEstimate {
    /// True when `target` lies within `k` standard errors of the mean. A
    /// relative floor of 1e-12 covers deterministic (zero-variance) cases.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        let tol = (k * self.std_err).max(1e-12 * (1.0 + target.abs()));
        (self.mean - target).abs() <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let data = [1.0, 4.0, -2.5, 3.25, 0.0, 9.0];
        let acc: Running = data.iter().copied().collect();
        let mean = data.iter().sum::<f64>() / 6.0;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((acc.mean() - mean).abs() < 1e-14);
        assert!((acc.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn single_sample_has_zero_spread() {
        let acc: Running = [3.0].into_iter().collect();
        assert_eq!(acc.std_dev(), 0.0);
        assert!(acc.estimate().agrees_with(3.0, 5.0));
    }
}
