//! Batch statistics of many fitted crossover frequencies: sample mean and
//! standard deviation, the standardized empirical CDF, and its comparison
//! with a fitted normal CDF.
//!
//! The normal reference uses the sample's own mean and standard deviation,
//! so the Kolmogorov statistic here is in the Lilliefors regime. The usual
//! Kolmogorov critical values are reported for orientation and are
//! conservative for this case.

use std::f64::consts::PI;

use thiserror::Error;

use crate::regression::pearson;

/// Asymptotic 5 % critical value of `√N·D` for the Kolmogorov test.
pub const KOLMOGOROV_CRITICAL_5PCT: f64 = 1.358;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("degenerate batch: all samples equal, standard deviation is 0")]
    ZeroSpread,
    #[error("invalid ECDF: {0}")]
    InvalidEcdf(String),
}

/// Error function, accurate to a few ulp.
///
/// Uses the positive-term series `erf(x) = 2/√π·e^{−x²}·Σ (2x²)ⁿ·x/(2n+1)!!`
/// for `|x| < 3` and the continued fraction for `erfc` beyond.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let value = if ax < 3.0 {
        let x2 = ax * ax;
        let mut term = ax;
        let mut sum = ax;
        let mut k = 0.0;
        while term > sum * 1e-17 {
            k += 1.0;
            term *= 2.0 * x2 / (2.0 * k + 1.0);
            sum += term;
        }
        2.0 / PI.sqrt() * (-x2).exp() * sum
    } else {
        1.0 - erfc_continued_fraction(ax)
    };
    value.copysign(x)
}

/// `erfc(x)` for `x ≥ 3` via `erfc(x) = e^{−x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))`.
fn erfc_continued_fraction(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=60).rev() {
        tail = x + 0.5 * k as f64 / tail;
    }
    (-x * x).exp() / PI.sqrt() / tail
}

/// Standard normal CDF `Φ(x) = (1 + erf(x/√2))/2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Mean and standard deviation with divisor `N − 1`.
pub fn batch_stats(samples: &[f64]) -> Result<(f64, f64), DistError> {
    if samples.len() < 2 {
        return Err(DistError::TooFewSamples(samples.len()));
    }
    if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
        return Err(DistError::NonFinite { index });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcdfPoint {
    /// Standardized deviation `(fᵢ − f̄)/σ_f`.
    pub x: f64,
    /// `i/N` for the i-th smallest sample.
    pub p: f64,
}

/// Sorted, standardized samples paired with `i/N`. Ties keep their input
/// order and produce equal consecutive abscissae.
pub fn empirical_cdf(samples: &[f64]) -> Result<Vec<EcdfPoint>, DistError> {
    let (mean, sd) = batch_stats(samples)?;
    if sd == 0.0 {
        return Err(DistError::ZeroSpread);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, f)| EcdfPoint {
            x: (f - mean) / sd,
            p: (i + 1) as f64 / n,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalFit {
    /// `maxᵢ max(|i/N − Φ(xᵢ)|, |(i−1)/N − Φ(xᵢ)|)`.
    pub kolmogorov_d: f64,
    /// `maxᵢ |i/N − Φ(xᵢ)|`, the distance read off a plot of the ECDF dots.
    pub kolmogorov_d_one_sided: f64,
    /// Pearson correlation between `{i/N}` and `{Φ(xᵢ)}`.
    pub cdf_corr: f64,
}

impl NormalFit {
    /// `√N·D` for an ECDF of `n` points.
    pub fn scaled_d(&self, n: usize) -> f64 {
        self.kolmogorov_d * (n as f64).sqrt()
    }
}

/// Compares an ECDF against the standard normal CDF.
pub fn normal_cdf_fit(ecdf: &[EcdfPoint]) -> Result<NormalFit, DistError> {
    if ecdf.len() < 2 {
        return Err(DistError::InvalidEcdf(format!(
            "need at least 2 points, got {}",
            ecdf.len()
        )));
    }
    for (i, w) in ecdf.windows(2).enumerate() {
        if !(w[1].p > w[0].p) || w[1].x < w[0].x {
            return Err(DistError::InvalidEcdf(format!(
                "points {i} and {} are out of order",
                i + 1
            )));
        }
    }
    let step = 1.0 / ecdf.len() as f64;
    let phi: Vec<f64> = ecdf.iter().map(|e| normal_cdf(e.x)).collect();
    let (mut d, mut d_one) = (0.0f64, 0.0f64);
    for (e, &cdf) in ecdf.iter().zip(&phi) {
        let upper = (e.p - cdf).abs();
        let lower = (e.p - step - cdf).abs();
        d_one = d_one.max(upper);
        d = d.max(upper.max(lower));
    }
    let ps: Vec<f64> = ecdf.iter().map(|e| e.p).collect();
    let cdf_corr = pearson(&ps, &phi).unwrap_or(0.0);
    Ok(NormalFit {
        kolmogorov_d: d,
        kolmogorov_d_one_sided: d_one,
        cdf_corr,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSample {
    pub id: String,
    pub f0: f64,
}

/// Full distribution analysis of a batch of crossover frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDistribution {
    pub samples: Vec<BatchSample>,
    pub n: usize,
    pub mean: f64,
    pub stddev: f64,
    pub ecdf: Vec<EcdfPoint>,
    pub fit: NormalFit,
}

impl BatchDistribution {
    pub fn analyze(samples: Vec<BatchSample>) -> Result<Self, DistError> {
        let values: Vec<f64> = samples.iter().map(|s| s.f0).collect();
        let (mean, stddev) = batch_stats(&values)?;
        let ecdf = empirical_cdf(&values)?;
        let fit = normal_cdf_fit(&ecdf)?;
        Ok(Self {
            n: samples.len(),
            samples,
            mean,
            stddev,
            ecdf,
            fit,
        })
    }

    pub fn relative_spread(&self) -> f64 {
        self.stddev / self.mean
    }

    pub fn kolmogorov_d(&self) -> f64 {
        self.fit.kolmogorov_d
    }

    pub fn cdf_corr(&self) -> f64 {
        self.fit.cdf_corr
    }

    /// Whether `√N·D` is below the asymptotic 5 % Kolmogorov critical value.
    pub fn below_kolmogorov_critical(&self) -> bool {
        self.fit.scaled_d(self.n) < KOLMOGOROV_CRITICAL_5PCT
    }
}
