//! Crossover-frequency extraction from a measured or synthetic gain sweep.
//!
//! In the single-pole model `1/Y² = 1/(R/r + 1)² + f²/f₀²`, so a straight
//! line through the points `(f², 1/Y²)` has slope `1/f₀²`. The intercept is
//! fitted freely and only compared with the resistor-derived value as a
//! calibration check.

use thiserror::Error;

use crate::model::{self, DeviceParams, InterceptMode, ModelError, Topology};
use crate::regression::fit_line;

/// Relative intercept deviation above which a fit is flagged as
/// miscalibrated.
pub const INTERCEPT_WARN_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("sweep needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid sweep record: {0}")]
    InvalidRecord(String),
    #[error("sweep does not resolve roll-off (fitted slope {slope:e} is not positive)")]
    NonPositiveSlope { slope: f64 },
    #[error("sweep range too narrow for n = {n} (max attainable n is {max_n:.6})")]
    NotBracketed { n: f64, max_n: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    /// Frequency in Hz.
    pub f: f64,
    /// Gain magnitude `U₀/U_I`.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordMeta {
    /// Circuit the sweep was taken on. When it has a divider, gains are
    /// taken to be end to end and are divided by the divider ratio before
    /// fitting.
    pub topology: Option<Topology>,
    pub label: Option<String>,
}

/// Ordered `(frequency, gain)` samples with strictly increasing frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    points: Vec<SweepPoint>,
    meta: RecordMeta,
}

impl SweepRecord {
    pub fn new(points: Vec<SweepPoint>, meta: RecordMeta) -> Result<Self, FitError> {
        if points.len() < 3 {
            return Err(FitError::TooFewPoints(points.len()));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.f.is_finite() && p.f > 0.0) {
                return Err(FitError::InvalidRecord(format!(
                    "point {i}: frequency must be finite and > 0, got {}",
                    p.f
                )));
            }
            if !(p.y.is_finite() && p.y > 0.0) {
                return Err(FitError::InvalidRecord(format!(
                    "point {i}: gain must be finite and > 0, got {}",
                    p.y
                )));
            }
            if i > 0 && p.f <= points[i - 1].f {
                return Err(FitError::InvalidRecord(format!(
                    "point {i}: frequency {} does not exceed previous {}",
                    p.f,
                    points[i - 1].f
                )));
            }
        }
        Ok(Self { points, meta })
    }

    /// Noise-free record of `|Υ(f)|` from the closed-form model.
    pub fn from_model(
        dev: &DeviceParams,
        topo: &Topology,
        freqs: &[f64],
    ) -> Result<Self, FitError> {
        let points = freqs
            .iter()
            .map(|&f| SweepPoint {
                f,
                y: model::closed_loop_gain(dev, topo, f).magnitude(),
            })
            .collect();
        Self::new(
            points,
            RecordMeta {
                topology: Some(*topo),
                label: Some("model".into()),
            },
        )
    }

    pub fn points(&self) -> &[SweepPoint] {
        &self.points
    }

    pub fn meta(&self) -> &RecordMeta {
        &self.meta
    }

    pub fn with_meta(mut self, meta: RecordMeta) -> Self {
        self.meta = meta;
        self
    }

    fn divider_ratio(&self) -> f64 {
        self.meta.topology.map_or(1.0, |t| t.divider_ratio())
    }

    /// Regression coordinates `(f², 1/Y²)` with `Y` the amplifier gain.
    pub fn transformed(&self) -> Vec<(f64, f64)> {
        let d = self.divider_ratio();
        self.points
            .iter()
            .map(|p| {
                let y = p.y / d;
                (p.f * p.f, 1.0 / (y * y))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Plain least squares in the `(f², 1/Y²)` plane.
    #[default]
    Unweighted,
    /// Weights `1/v²`, appropriate when gains carry a constant relative
    /// error (then `σ(1/Y²) ∝ 1/Y²`).
    RelativeGain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub f0: f64,
    /// `1/f₀²` in 1/Hz².
    pub slope: f64,
    pub intercept: f64,
    pub corr: f64,
    /// `1/(R/r + 1)²` when the record carries a topology.
    pub intercept_expected: Option<f64>,
    pub intercept_rel_dev: Option<f64>,
    pub n_points: usize,
}

/// Intercept compared with both the ideal and the finite-`G₀` prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterceptDiagnostic {
    pub ideal_expected: f64,
    pub ideal_rel_dev: f64,
    pub finite_gain_expected: f64,
    pub finite_gain_rel_dev: f64,
}

impl FitResult {
    /// True when the fitted intercept is more than 20 % away from the
    /// resistor-derived value, which points at a gain calibration problem.
    pub fn is_miscalibrated(&self) -> bool {
        self.intercept_rel_dev
            .is_some_and(|d| d.abs() > INTERCEPT_WARN_THRESHOLD)
    }

    pub fn intercept_diagnostic(
        &self,
        topo: &Topology,
        g0: f64,
    ) -> Result<InterceptDiagnostic, ModelError> {
        let dev = DeviceParams::new(self.f0, g0)?;
        let ideal = model::inverse_gain_squared(&dev, topo, 0.0, InterceptMode::Ideal);
        let finite = model::inverse_gain_squared(&dev, topo, 0.0, InterceptMode::FiniteGain);
        Ok(InterceptDiagnostic {
            ideal_expected: ideal,
            ideal_rel_dev: (self.intercept - ideal) / ideal,
            finite_gain_expected: finite,
            finite_gain_rel_dev: (self.intercept - finite) / finite,
        })
    }

    /// Points on the fitted line at `u = f²`.
    pub fn line_at(&self, u: f64) -> f64 {
        self.intercept + self.slope * u
    }
}

pub fn fit_f0(record: &SweepRecord) -> Result<FitResult, FitError> {
    fit_f0_with(record, Weighting::Unweighted)
}

pub fn fit_f0_with(record: &SweepRecord, weighting: Weighting) -> Result<FitResult, FitError> {
    let pts = record.transformed();
    if pts.len() < 3 {
        return Err(FitError::TooFewPoints(pts.len()));
    }
    let (us, vs): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    if vs.iter().any(|v| !v.is_finite()) {
        return Err(FitError::InvalidRecord("1/Y² is not finite".into()));
    }
    let weights: Option<Vec<f64>> = match weighting {
        Weighting::Unweighted => None,
        Weighting::RelativeGain => Some(vs.iter().map(|v| 1.0 / (v * v)).collect()),
    };
    let line = fit_line(&us, &vs, weights.as_deref())
        .ok_or_else(|| FitError::InvalidRecord("frequencies do not spread".into()))?;
    if !(line.slope > 0.0) {
        return Err(FitError::NonPositiveSlope { slope: line.slope });
    }

    let intercept_expected = record.meta().topology.map(|t| t.dc_gain().recip().powi(2));
    Ok(FitResult {
        f0: line.slope.sqrt().recip(),
        slope: line.slope,
        intercept: line.intercept,
        corr: line.corr,
        intercept_expected,
        intercept_rel_dev: intercept_expected.map(|e| (line.intercept - e) / e),
        n_points: us.len(),
    })
}

/// How the low-frequency gain `Y₀` is read from a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LowFrequencyGain {
    /// First (lowest-frequency) point.
    #[default]
    FirstPoint,
    /// Mean over the lowest tenth of the sweep (at least one point).
    LowestDecile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuickFit {
    pub f0: f64,
    pub n: f64,
    /// Interpolated frequency where `Y = Y₀/n`.
    pub f_1_over_n: f64,
    pub y0: f64,
    /// The two samples bracketing `Y₀/n`.
    pub lower: SweepPoint,
    pub upper: SweepPoint,
    /// `R/r + 1` from the record's topology, or the measured `Y₀`.
    pub dc_gain_used: f64,
}

pub fn quick_fit_f0(record: &SweepRecord, n: f64) -> Result<QuickFit, FitError> {
    quick_fit_f0_with(record, n, LowFrequencyGain::FirstPoint)
}

/// Reads `f_{1/n}` off the sweep and converts it with
/// `f₀ = (R/r + 1)·f_{1/n}/√(n² − 1)`.
///
/// The crossing is interpolated linearly between the bracketing samples in
/// the `(f², 1/Y²)` plane, where the model is a straight line.
pub fn quick_fit_f0_with(
    record: &SweepRecord,
    n: f64,
    y0_mode: LowFrequencyGain,
) -> Result<QuickFit, FitError> {
    if !(n > 1.0) || !n.is_finite() {
        return Err(ModelError::InvalidRatio(n).into());
    }
    let pts = record.points();
    let y0 = match y0_mode {
        LowFrequencyGain::FirstPoint => pts[0].y,
        LowFrequencyGain::LowestDecile => {
            let k = (pts.len() / 10).max(1);
            pts[..k].iter().map(|p| p.y).sum::<f64>() / k as f64
        }
    };
    let target = y0 / n;
    let j = pts
        .iter()
        .position(|p| p.y <= target)
        .filter(|&j| j > 0)
        .ok_or_else(|| {
            let min_y = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            FitError::NotBracketed {
                n,
                max_n: y0 / min_y,
            }
        })?;
    let (a, b) = (pts[j - 1], pts[j]);

    let (ua, va) = (a.f * a.f, 1.0 / (a.y * a.y));
    let (ub, vb) = (b.f * b.f, 1.0 / (b.y * b.y));
    let vt = 1.0 / (target * target);
    let u = if vb == va {
        ub
    } else {
        ua + (vt - va) * (ub - ua) / (vb - va)
    };
    let f_1_over_n = u.sqrt();

    let (f0, dc_gain_used) = match record.meta().topology {
        Some(topo) => (
            model::quick_f0_general(&topo, n, f_1_over_n)?,
            topo.dc_gain(),
        ),
        None => (model::quick_f0_from_gain(y0, n, f_1_over_n)?, y0),
    };
    Ok(QuickFit {
        f0,
        n,
        f_1_over_n,
        y0,
        lower: a,
        upper: b,
        dc_gain_used,
    })
}
