//! Output analysis: batch-means estimates, compensated sums, distance
//! statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of batches for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EstimateError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

/// A Monte Carlo estimate with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub value: f64,
    pub stderr: f64,
    /// Number of underlying observations (events, firings or segments).
    pub count: u64,
    /// Total weight behind `value` (elapsed time or number of epochs).
    pub weight: f64,
    /// Number of non-empty batches behind `stderr`.
    pub batches: usize,
}

impl EstimateWithCI {
    /// An estimate known without sampling error.
    pub fn exact(value: f64) -> Self {
        EstimateWithCI {
            value,
            stderr: 0.0,
            count: 0,
            weight: 0.0,
            batches: 0,
        }
    }

    /// Weighted merge of two independent estimates. Commutative, and
    /// associative up to floating rounding.
    pub fn merge(&self, other: &EstimateWithCI) -> EstimateWithCI {
        let w = self.weight + other.weight;
        if w == 0.0 {
            return EstimateWithCI {
                count: self.count + other.count,
                batches: self.batches + other.batches,
                ..*self
            };
        }
        let (a, b) = (self.weight / w, other.weight / w);
        EstimateWithCI {
            value: a * self.value + b * other.value,
            stderr: ((a * self.stderr).powi(2) + (b * other.stderr).powi(2)).sqrt(),
            count: self.count + other.count,
            weight: w,
            batches: self.batches + other.batches,
        }
    }

    /// `|value - target| <= k · stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }

    /// `self - scale · other` with standard errors combined in quadrature.
    pub fn minus_scaled(&self, scale: f64, other: &EstimateWithCI) -> EstimateWithCI {
        EstimateWithCI {
            value: self.value - scale * other.value,
            stderr: self.stderr.hypot(scale * other.stderr),
            count: self.count.min(other.count),
            weight: self.weight.min(other.weight),
            batches: self.batches.min(other.batches),
        }
    }
}

/// Per-batch numerator/denominator sums of a ratio estimator.
///
/// The point estimate is `Σ num / Σ den`; the standard error is the sample
/// standard deviation of the per-batch ratios over `√(batches)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRatio {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    pub count: u64,
}

impl BatchRatio {
    pub fn new(batches: usize) -> Self {
        BatchRatio {
            num: vec![0.0; batches],
            den: vec![0.0; batches],
            count: 0,
        }
    }

    pub fn from_parts(num: Vec<f64>, den: Vec<f64>, count: u64) -> Self {
        assert_eq!(num.len(), den.len());
        BatchRatio { num, den, count }
    }

    #[inline]
    pub fn add(&mut self, batch: usize, num: f64, den: f64) {
        self.num[batch] += num;
        self.den[batch] += den;
        self.count += 1;
    }

    pub fn batches(&self) -> usize {
        self.num.len()
    }

    /// Elementwise sum of two accumulators with the same batch layout.
    pub fn merge(&mut self, other: &BatchRatio) {
        assert_eq!(self.batches(), other.batches());
        for (a, b) in self.num.iter_mut().zip(&other.num) {
            *a += b;
        }
        for (a, b) in self.den.iter_mut().zip(&other.den) {
            *a += b;
        }
        self.count += other.count;
    }

    pub fn estimate(&self) -> Result<EstimateWithCI, EstimateError> {
        ratio_estimate(&self.num, &self.den, self.count)
    }
}

/// Batch-means ratio estimate from per-batch sums.
pub fn ratio_estimate(num: &[f64], den: &[f64], count: u64) -> Result<EstimateWithCI, EstimateError> {
    let total_den: f64 = den.iter().sum();
    if total_den <= 0.0 {
        return Err(EstimateError::InsufficientData(
            "no post-warmup observations".into(),
        ));
    }
    let total_num: f64 = num.iter().sum();
    let value = total_num / total_den;
    let ratios: Vec<f64> = num
        .iter()
        .zip(den)
        .filter(|(_, d)| **d > 0.0)
        .map(|(n, d)| n / d)
        .collect();
    let k = ratios.len();
    let stderr = if k >= 2 {
        let mean = ratios.iter().sum::<f64>() / k as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(EstimateWithCI {
        value,
        stderr,
        count,
        weight: total_den,
        batches: k,
    })
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
    /// Sum of absolute values, the scale for relative error budgets.
    magnitude: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
        self.magnitude += x.abs();
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        let magnitude = self.magnitude + other.magnitude;
        self.add(other.sum);
        self.add(other.compensation);
        self.magnitude = magnitude;
    }
}

/// Total-variation distance between two probability vectors on a common
/// support (missing entries are zero).
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical_value(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}
