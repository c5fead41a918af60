use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Streaming count, mean and centred second moment (Welford), plus the raw
/// second moment and the largest squared sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
    sum_sq: f64,
    max_sq: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut s = Self::new();
        for &v in values {
            s.push(v);
        }
        s
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        let sq = x * x;
        self.sum_sq += sq;
        if sq > self.max_sq {
            self.max_sq = sq;
        }
    }

    /// Pairwise merge of statistics over disjoint sample sets.
    #[must_use]
    pub fn merge(&self, other: &Self) -> Self {
        if other.count == 0 {
            return *self;
        }
        if self.count == 0 {
            return *other;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        Self {
            count: n,
            mean: self.mean + delta * nb / n as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n as f64,
            sum_sq: self.sum_sq + other.sum_sq,
            max_sq: self.max_sq.max(other.max_sq),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.variance() / self.count as f64).sqrt()
    }

    /// `(1/n) Σ x²`.
    pub fn second_moment(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_sq / self.count as f64
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.max_sq.sqrt()
    }

    /// Share of `Σ x²` carried by the single largest sample.
    pub fn max_share(&self) -> f64 {
        if self.sum_sq > 0.0 {
            self.max_sq / self.sum_sq
        } else {
            0.0
        }
    }
}

/// Two-sided standard normal quantile `z` with `P[|Z| ≤ z] = level`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + 0.5 * level))
}

/// `mean ± z(level) · SE`.
pub fn confidence_interval(stats: &RunningStats, level: f64) -> Result<(f64, f64)> {
    if stats.count() < 2 {
        return Err(Error::Run(format!(
            "a confidence interval needs at least two samples, got {}",
            stats.count()
        )));
    }
    let half = normal_quantile(level)? * stats.std_error();
    Ok((stats.mean() - half, stats.mean() + half))
}
