//! Streaming moments and normal quantiles.

use statrs::distribution::{ContinuousCDF, Normal};

/// Welford accumulator. The running mean of a constant sequence is exact.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Bessel-corrected sample variance; `None` below two samples.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2 / (self.count - 1) as f64).max(0.0))
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> Option<f64> {
        self.variance().map(|v| (v / self.count as f64).sqrt())
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// `(1 - nu/2)` quantile of the standard normal distribution.
pub fn two_sided_quantile(nu: f64) -> f64 {
    assert!(
        nu > 0.0 && nu < 1.0,
        "confidence parameter must lie in (0, 1)"
    );
    Normal::standard().inverse_cdf(1.0 - nu / 2.0)
}

/// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
pub fn within_pooled_se(a: f64, se_a: f64, b: f64, se_b: f64, k: f64) -> bool {
    (a - b).abs() <= k * (se_a * se_a + se_b * se_b).sqrt()
}
