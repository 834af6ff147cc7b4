//! Deterministic numerical kernel: compensated sums, moments, the class-level
//! gender skewness, Pearson correlation and Welch's t statistic.
//!
//! Every reduction walks its input in order and accumulates with Neumaier's
//! compensated summation, so a result depends only on the values and their
//! order, never on how callers partitioned the work.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("normalizer must be positive")]
    InvalidNormalizer,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("insufficient samples: need at least 2 per group, got {n1} and {n2}")]
    InsufficientSamples { n1: usize, n2: usize },
}

/// Neumaier's compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

pub fn sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(values);
    acc.value()
}

pub fn mean(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    Ok(sum(values.iter().copied()) / values.len() as f64)
}

/// Population variance (divides by `n`).
pub fn population_variance(values: &[f64]) -> Result<f64, StatsError> {
    let m = mean(values)?;
    Ok(sum(values.iter().map(|v| (v - m) * (v - m))) / values.len() as f64)
}

pub fn population_std(values: &[f64]) -> Result<f64, StatsError> {
    population_variance(values).map(f64::sqrt)
}

/// Sample variance (divides by `n - 1`).
pub fn sample_variance(values: &[f64]) -> Result<f64, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::InsufficientSamples {
            n1: values.len(),
            n2: values.len(),
        });
    }
    let m = mean(values)?;
    Ok(sum(values.iter().map(|v| (v - m) * (v - m))) / (values.len() - 1) as f64)
}

// Exact test; rounding in the mean would otherwise leave a spurious
// nonzero deviation for constant inputs.
fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Median via a sorted copy; `None` on empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    })
}

/// Linearly interpolated quantile, `q` in `[0, 1]` (the "type 7" rule:
/// position `q * (n - 1)` in the sorted data).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Third standardized moment of `values`, normalized by `normalizer` rather
/// than by `values.len()`.
///
/// `mu` and `sigma` are the mean and population standard deviation of
/// `values`. The census sums only over face-present images but divides by
/// the full class size, hence the separate normalizer. Returns 0 when
/// `sigma` is 0.
pub fn skewness(values: &[f64], normalizer: usize) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if normalizer == 0 {
        return Err(StatsError::InvalidNormalizer);
    }
    if is_constant(values) {
        return Ok(0.0);
    }
    let mu = mean(values)?;
    let sigma = population_std(values)?;
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let total = sum(values.iter().map(|v| {
        let z = (v - mu) / sigma;
        z * z * z
    }));
    Ok(total / normalizer as f64)
}

/// Pearson's product-moment correlation, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(StatsError::InsufficientSamples {
            n1: x.len(),
            n2: y.len(),
        });
    }
    if is_constant(x) || is_constant(y) {
        return Err(StatsError::DegenerateInput("zero variance"));
    }
    let mx = mean(x)?;
    let my = mean(y)?;
    let sxy = sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = sum(y.iter().map(|b| (b - my) * (b - my)));
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub n1: usize,
    pub n2: usize,
    pub mean1: f64,
    pub mean2: f64,
}

/// Welch's unequal-variance t statistic with Welch–Satterthwaite degrees
/// of freedom. No p-value is computed.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::InsufficientSamples {
            n1: a.len(),
            n2: b.len(),
        });
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mean1 = mean(a)?;
    let mean2 = mean(b)?;
    let va = if is_constant(a) { 0.0 } else { sample_variance(a)? / n1 };
    let vb = if is_constant(b) { 0.0 } else { sample_variance(b)? / n2 };
    if va == 0.0 && vb == 0.0 {
        return Err(StatsError::DegenerateInput("both samples have zero variance"));
    }
    let se2 = va + vb;
    let t = (mean1 - mean2) / se2.sqrt();
    let df = se2 * se2 / (va * va / (n1 - 1.0) + vb * vb / (n2 - 1.0));
    Ok(WelchResult {
        t,
        df,
        n1: a.len(),
        n2: b.len(),
        mean1,
        mean2,
    })
}
