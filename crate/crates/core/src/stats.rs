//! Small Monte Carlo reducers.

use serde::{Deserialize, Serialize};

/// A point estimate together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(mean: f64, se: f64) -> Self {
        Self { mean, se }
    }

    pub fn exact(value: f64) -> Self {
        Self { mean: value, se: 0.0 }
    }

    /// Relative standard error, `se / |mean|`.
    pub fn rel_se(&self) -> f64 {
        if self.mean == 0.0 {
            f64::INFINITY
        } else {
            self.se / self.mean.abs()
        }
    }

    /// Combined standard error of the difference of two independent estimates.
    pub fn pooled_se(&self, other: &Estimate) -> f64 {
        (self.se * self.se + other.se * other.se).sqrt()
    }

    /// `|a - b| <= k * pooled_se`.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.pooled_se(other)
    }
}

/// Streaming mean/variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn se(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.mean(), self.se())
    }
}

/// Elementwise Welford accumulators over a fixed-length vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldWelford {
    cells: Vec<Welford>,
}

impl FieldWelford {
    pub fn new(len: usize) -> Self {
        Self {
            cells: vec![Welford::new(); len],
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        for (w, &v) in self.cells.iter_mut().zip(values) {
            w.push(v);
        }
    }

    pub fn merge(&mut self, other: &FieldWelford) {
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
    }

    pub fn count(&self) -> u64 {
        self.cells.first().map_or(0, |w| w.count())
    }

    pub fn mean(&self) -> Vec<f64> {
        self.cells.iter().map(|w| w.mean()).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.cells.iter().map(|w| w.variance()).collect()
    }

    pub fn se(&self) -> Vec<f64> {
        self.cells.iter().map(|w| w.se()).collect()
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sample Kolmogorov-Smirnov distance between an empirical sample
/// and a tabulated CDF given at increasing abscissae.
pub fn ks_distance(sample: &mut [f64], cdf_x: &[f64], cdf: &[f64]) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let eval = |y: f64| -> f64 {
        match cdf_x.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => cdf[i],
            Err(0) => 0.0,
            Err(i) if i >= cdf_x.len() => 1.0,
            Err(i) => {
                let w = (y - cdf_x[i - 1]) / (cdf_x[i] - cdf_x[i - 1]);
                cdf[i - 1] * (1.0 - w) + cdf[i] * w
            }
        }
    };
    let mut d: f64 = 0.0;
    for (i, &y) in sample.iter().enumerate() {
        let f = eval(y);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    d
}
