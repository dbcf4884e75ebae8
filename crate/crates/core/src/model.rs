//! Single-pole operational amplifier model and the closed-form frequency
//! response of the non-inverting amplifier built around it.
//!
//! The open-loop behaviour is `G⁻¹(s) = 1/G₀ + s·τ₀` with the crossover
//! frequency `f₀ = 1/(2π·τ₀)`. Closing the loop with a feedback fraction
//! `β = r/(R + r)` gives
//!
//! ```text
//! Υ(f) = 1 / (β + 1/G₀ + j·2π·f·τ₀)
//! ```
//!
//! Phasors follow the `e^{+jωt}` convention. Only magnitudes leave this
//! module, so the sign of the phase never matters downstream.

use std::f64::consts::{PI, SQRT_2};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid device parameters: {0}")]
    InvalidDevice(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("formula requires a finite closed-loop gain above 1, got a repeater topology")]
    RepeaterTopology,
    #[error("gain ratio n must be > 1, got {0}")]
    InvalidRatio(f64),
    #[error("frequency must be finite and positive, got {0}")]
    InvalidFrequency(f64),
}

/// Op-amp parameters: DC open-loop gain and crossover frequency.
///
/// `g0` may be `f64::INFINITY`, which is the ideal-gain analysis mode
/// (`1/G₀ = 0`). `f0` is stored; `τ₀` is always derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceParams {
    g0: f64,
    f0: f64,
}

impl DeviceParams {
    pub fn new(f0: f64, g0: f64) -> Result<Self, ModelError> {
        if !(f0.is_finite() && f0 > 0.0) {
            return Err(ModelError::InvalidDevice(format!(
                "crossover frequency f0 must be finite and > 0, got {f0}"
            )));
        }
        if g0.is_nan() || g0 <= 1.0 {
            return Err(ModelError::InvalidDevice(format!(
                "DC open-loop gain g0 must be > 1, got {g0}"
            )));
        }
        Ok(Self { g0, f0 })
    }

    /// Device with `G₀ → ∞`.
    pub fn ideal(f0: f64) -> Result<Self, ModelError> {
        Self::new(f0, f64::INFINITY)
    }

    pub fn from_tau0(tau0: f64, g0: f64) -> Result<Self, ModelError> {
        if !(tau0.is_finite() && tau0 > 0.0) {
            return Err(ModelError::InvalidDevice(format!(
                "time constant tau0 must be finite and > 0, got {tau0}"
            )));
        }
        Self::new(1.0 / (2.0 * PI * tau0), g0)
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn tau0(&self) -> f64 {
        1.0 / (2.0 * PI * self.f0)
    }

    /// `1/G₀`, zero in the ideal-gain mode.
    pub fn inverse_g0(&self) -> f64 {
        self.g0.recip()
    }

    pub fn is_ideal(&self) -> bool {
        self.g0.is_infinite()
    }

    /// Same device with `G₀ → ∞`.
    pub fn without_dc_gain_limit(&self) -> Self {
        Self {
            g0: f64::INFINITY,
            f0: self.f0,
        }
    }
}

/// Resistive attenuator `r2/(r1 + r2)` placed in front of the amplifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divider {
    pub r1: f64,
    pub r2: f64,
}

impl Divider {
    pub fn new(r1: f64, r2: f64) -> Result<Self, ModelError> {
        if !(r1.is_finite() && r1 >= 0.0) {
            return Err(ModelError::InvalidTopology(format!(
                "divider r1 must be finite and >= 0, got {r1}"
            )));
        }
        if !(r2.is_finite() && r2 > 0.0) {
            return Err(ModelError::InvalidTopology(format!(
                "divider r2 must be finite and > 0, got {r2}"
            )));
        }
        Ok(Self { r1, r2 })
    }

    pub fn ratio(&self) -> f64 {
        self.r2 / (self.r1 + self.r2)
    }
}

/// Non-inverting amplifier: feedback resistor `R` from output to the
/// inverting input, gain resistor `r` from there to ground, and an optional
/// input divider.
///
/// A repeater (voltage follower) is either `gain_r` open or
/// `feedback_r == 0`; both give `β = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Topology {
    feedback_r: f64,
    gain_r: Option<f64>,
    divider: Option<Divider>,
}

impl Topology {
    pub fn new(feedback_r: f64, gain_r: f64) -> Result<Self, ModelError> {
        if !(feedback_r.is_finite() && feedback_r >= 0.0) {
            return Err(ModelError::InvalidTopology(format!(
                "feedback resistance must be finite and >= 0, got {feedback_r}"
            )));
        }
        if gain_r.is_nan() || gain_r <= 0.0 {
            return Err(ModelError::InvalidTopology(format!(
                "gain resistance must be > 0 (or open), got {gain_r}"
            )));
        }
        let gain_r = if gain_r.is_infinite() {
            None
        } else {
            Some(gain_r)
        };
        Ok(Self {
            feedback_r,
            gain_r,
            divider: None,
        })
    }

    /// Unity-gain follower.
    pub fn repeater() -> Self {
        Self {
            feedback_r: 0.0,
            gain_r: None,
            divider: None,
        }
    }

    /// Topology realising a given feedback fraction with `r = 1 Ω`.
    pub fn from_beta(beta: f64) -> Result<Self, ModelError> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(ModelError::InvalidTopology(format!(
                "feedback fraction must lie in (0, 1], got {beta}"
            )));
        }
        if beta == 1.0 {
            return Ok(Self::repeater());
        }
        Self::new(1.0 / beta - 1.0, 1.0)
    }

    pub fn with_divider(mut self, divider: Divider) -> Self {
        self.divider = Some(divider);
        self
    }

    pub fn feedback_r(&self) -> f64 {
        self.feedback_r
    }

    /// `None` when the gain resistor is open.
    pub fn gain_r(&self) -> Option<f64> {
        self.gain_r
    }

    pub fn divider(&self) -> Option<Divider> {
        self.divider
    }

    /// Attenuation applied to the stimulus before the amplifier, 1 without a divider.
    pub fn divider_ratio(&self) -> f64 {
        self.divider.map_or(1.0, |d| d.ratio())
    }

    pub fn is_repeater(&self) -> bool {
        self.feedback_r == 0.0 || self.gain_r.is_none()
    }

    /// Feedback fraction `β = r/(R + r)`.
    pub fn beta(&self) -> f64 {
        match self.gain_r {
            Some(r) if self.feedback_r > 0.0 => r / (self.feedback_r + r),
            _ => 1.0,
        }
    }

    /// Ideal DC gain `1/β = R/r + 1`.
    pub fn dc_gain(&self) -> f64 {
        match self.gain_r {
            Some(r) if self.feedback_r > 0.0 => self.feedback_r / r + 1.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexGain {
    pub re: f64,
    pub im: f64,
}

impl ComplexGain {
    pub fn norm_sqr(&self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn magnitude(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// How the `1/G₀` term enters the regression intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterceptMode {
    /// `1/(R/r + 1)²`, the `G₀ → ∞` limit.
    #[default]
    Ideal,
    /// `(β + 1/G₀)²`.
    FiniteGain,
}

/// Closed-loop transfer `Υ(f) = 1/(β + 1/G₀ + j·2πf·τ₀)`.
pub fn closed_loop_gain(dev: &DeviceParams, topo: &Topology, f: f64) -> ComplexGain {
    let a = topo.beta() + dev.inverse_g0();
    let b = 2.0 * PI * f * dev.tau0();
    let d = a * a + b * b;
    ComplexGain {
        re: a / d,
        im: -b / d,
    }
}

/// Regression ordinate `1/Y²(f) = intercept + f²/f₀²`.
pub fn inverse_gain_squared(
    dev: &DeviceParams,
    topo: &Topology,
    f: f64,
    mode: InterceptMode,
) -> f64 {
    let a = match mode {
        InterceptMode::Ideal => topo.dc_gain().recip(),
        InterceptMode::FiniteGain => topo.beta() + dev.inverse_g0(),
    };
    let x = f / dev.f0();
    a * a + x * x
}

/// Crossover frequency from the half-gain frequency, `f₀ = (R/r + 1)·f½/√3`.
pub fn quick_f0(topo: &Topology, f_half: f64) -> Result<f64, ModelError> {
    quick_f0_general(topo, 2.0, f_half)
}

/// Crossover frequency from the frequency at which the gain has fallen by
/// a factor `n`: `f₀ = (R/r + 1)·f_{1/n}/√(n² − 1)`.
pub fn quick_f0_general(topo: &Topology, n: f64, f_1_over_n: f64) -> Result<f64, ModelError> {
    if topo.is_repeater() {
        return Err(ModelError::RepeaterTopology);
    }
    quick_f0_from_gain(topo.dc_gain(), n, f_1_over_n)
}

/// As [`quick_f0_general`], with the low-frequency gain supplied directly
/// (e.g. measured) instead of taken from the resistor values.
pub fn quick_f0_from_gain(dc_gain: f64, n: f64, f_1_over_n: f64) -> Result<f64, ModelError> {
    if !(n > 1.0) || !n.is_finite() {
        return Err(ModelError::InvalidRatio(n));
    }
    check_frequency(f_1_over_n)?;
    if !(dc_gain.is_finite() && dc_gain > 0.0) {
        return Err(ModelError::InvalidTopology(format!(
            "low-frequency gain must be finite and > 0, got {dc_gain}"
        )));
    }
    Ok(dc_gain * f_1_over_n / (n * n - 1.0).sqrt())
}

/// `f_CROSSOVER = (R_F + R_G)/R_G · f₋₃dB`. An open `R_G` gives factor 1.
pub fn crossover_from_minus3db(topo: &Topology, f_3db: f64) -> Result<f64, ModelError> {
    check_frequency(f_3db)?;
    Ok(topo.dc_gain() * f_3db)
}

/// Frequency at which `|Υ(f)| = ratio·|Υ(0)|`, located by bisection on the
/// closed-loop magnitude. `ratio` must lie in (0, 1).
///
/// `ratio = 10^(−3/20)` gives the exact −3 dB point; `1/√2` gives the
/// half-power point used by the crossover relation.
pub fn frequency_at_relative_gain(
    dev: &DeviceParams,
    topo: &Topology,
    ratio: f64,
) -> Result<f64, ModelError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ModelError::InvalidRatio(ratio));
    }
    let target = ratio * closed_loop_gain(dev, topo, 0.0).magnitude();
    let below = |f: f64| closed_loop_gain(dev, topo, f).magnitude() < target;

    let mut lo = 0.0;
    let mut hi = dev.f0();
    while !below(hi) {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Exact −3 dB magnitude ratio, `10^(−3/20)`.
pub fn minus_3db_ratio() -> f64 {
    10f64.powf(-3.0 / 20.0)
}

/// Half-power magnitude ratio `1/√2`.
pub fn half_power_ratio() -> f64 {
    1.0 / SQRT_2
}

fn check_frequency(f: f64) -> Result<(), ModelError> {
    if f.is_finite() && f > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidFrequency(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fig1_topology() -> Topology {
        Topology::new(1989.0, 20.1).unwrap()
    }

    #[test]
    fn tau0_and_f0_are_reciprocal() {
        for &f0 in &[1.0, 39.6e6, 97.73e6, 410e6, 1.234_567e9] {
            let dev = DeviceParams::ideal(f0).unwrap();
            assert_eq!(dev.f0(), f0);
            assert_eq!(DeviceParams::ideal(dev.f0()).unwrap().tau0(), dev.tau0());
            assert_relative_eq!(
                dev.tau0() * 2.0 * PI * dev.f0(),
                1.0,
                max_relative = 4.0 * f64::EPSILON
            );
        }
    }

    #[test]
    fn device_rejects_bad_values() {
        assert!(DeviceParams::new(0.0, 1e5).is_err());
        assert!(DeviceParams::new(-1.0, 1e5).is_err());
        assert!(DeviceParams::new(f64::NAN, 1e5).is_err());
        assert!(DeviceParams::new(1e6, 1.0).is_err());
        assert!(DeviceParams::new(1e6, 0.5).is_err());
        assert!(DeviceParams::from_tau0(0.0, 1e5).is_err());
    }

    #[test]
    fn topology_feedback_fraction() {
        let t = Topology::new(1000.0, 10.0).unwrap();
        assert_relative_eq!(t.beta(), 10.0 / 1010.0);
        assert_relative_eq!(t.dc_gain(), 101.0);
        assert!(!t.is_repeater());

        let open = Topology::new(1000.0, f64::INFINITY).unwrap();
        assert!(open.is_repeater());
        assert_eq!(open.beta(), 1.0);
        let shorted = Topology::new(0.0, 10.0).unwrap();
        assert!(shorted.is_repeater());
        assert_eq!(shorted.beta(), 1.0);
        assert_eq!(shorted.dc_gain(), 1.0);

        assert!(Topology::new(-1.0, 10.0).is_err());
        assert!(Topology::new(10.0, 0.0).is_err());
        assert!(Topology::from_beta(0.0).is_err());
        assert!(Topology::from_beta(1.5).is_err());
        assert_relative_eq!(
            Topology::from_beta(1.0 / 101.0).unwrap().dc_gain(),
            101.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn divider_ratio() {
        let t = Topology::new(1000.0, 10.0)
            .unwrap()
            .with_divider(Divider::new(1000.0, 10.0).unwrap());
        assert_relative_eq!(t.divider_ratio(), 10.0 / 1010.0);
        assert_eq!(Topology::repeater().divider_ratio(), 1.0);
        assert!(Divider::new(1000.0, 0.0).is_err());
    }

    #[test]
    fn dc_gain_of_fig1_amplifier() {
        let dev = DeviceParams::ideal(39.6e6).unwrap();
        let y = closed_loop_gain(&dev, &fig1_topology(), 0.0);
        // 1989/20.1 + 1
        assert_relative_eq!(y.magnitude(), 99.955_223_880_597, max_relative = 1e-12);
        assert_eq!(y.im, 0.0);
    }

    #[test]
    fn repeater_at_crossover_is_half_power() {
        let dev = DeviceParams::ideal(39.6e6).unwrap();
        let y = closed_loop_gain(&dev, &Topology::repeater(), 39.6e6);
        assert_relative_eq!(y.magnitude(), 1.0 / SQRT_2, max_relative = 1e-14);
    }

    #[test]
    fn finite_open_loop_gain_lowers_dc_gain() {
        let dev = DeviceParams::new(100e6, 1e5).unwrap();
        let topo = Topology::from_beta(1.0 / 101.0).unwrap();
        let y = closed_loop_gain(&dev, &topo, 0.0).magnitude();
        let oracle = 1.0 / (1.0 / 101.0 + 1e-5);
        assert_relative_eq!(y, oracle, max_relative = 1e-12);
        assert_relative_eq!(y, 100.899, max_relative = 1e-5);

        let ideal = closed_loop_gain(&dev.without_dc_gain_limit(), &topo, 0.0).magnitude();
        assert!((ideal - y) / ideal < 0.0011);
    }

    #[test]
    fn inverse_gain_squared_fig1_intercept() {
        let dev = DeviceParams::ideal(39.6e6).unwrap();
        let v = inverse_gain_squared(&dev, &fig1_topology(), 0.0, InterceptMode::Ideal);
        let expected = 1.0 / (1989.0f64 / 20.1 + 1.0).powi(2);
        assert_relative_eq!(v, expected, max_relative = 1e-14);
        assert_relative_eq!(v, 1.000_896e-4, max_relative = 1e-6);
    }

    #[test]
    fn inverse_gain_squared_at_f0_without_intercept() {
        let dev = DeviceParams::ideal(97.73e6).unwrap();
        let topo = Topology::new(1e12, 1.0).unwrap();
        let v = inverse_gain_squared(&dev, &topo, 97.73e6, InterceptMode::Ideal);
        assert_relative_eq!(v, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn inverse_gain_squared_matches_closed_loop_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let f0 = 10f64.powf(rng.random_range(6.0..9.0));
            let beta = 10f64.powf(rng.random_range(-3.0..0.0));
            let f = 10f64.powf(rng.random_range(2.0..9.0));
            let dev = DeviceParams::ideal(f0).unwrap();
            let topo = Topology::from_beta(beta).unwrap();
            let v = inverse_gain_squared(&dev, &topo, f, InterceptMode::Ideal);
            let oracle = 1.0 / closed_loop_gain(&dev, &topo, f).norm_sqr();
            assert_relative_eq!(v, oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn finite_gain_intercept_matches_closed_loop_gain() {
        let dev = DeviceParams::new(50e6, 2e4).unwrap();
        let topo = Topology::new(1000.0, 10.0).unwrap();
        for &f in &[0.0, 1e3, 1e5, 1e7] {
            let v = inverse_gain_squared(&dev, &topo, f, InterceptMode::FiniteGain);
            let oracle = 1.0 / closed_loop_gain(&dev, &topo, f).norm_sqr();
            assert_relative_eq!(v, oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn quick_f0_examples() {
        // f½ = √3·39.6 MHz/99.9552
        let f0 = quick_f0(&fig1_topology(), 686.199_373e3).unwrap();
        assert_relative_eq!(f0, 39.6e6, max_relative = 1e-8);

        let topo = Topology::from_beta(1.0 / 3f64.sqrt()).unwrap();
        assert_relative_eq!(quick_f0(&topo, 1e6).unwrap(), 1e6, max_relative = 1e-12);

        assert_eq!(
            quick_f0(&Topology::repeater(), 1e6),
            Err(ModelError::RepeaterTopology)
        );
        assert!(quick_f0(&fig1_topology(), 0.0).is_err());
    }

    #[test]
    fn quick_f0_general_examples() {
        let topo = fig1_topology();
        assert_eq!(
            quick_f0_general(&topo, 2.0, 679.45e3).unwrap(),
            quick_f0(&topo, 679.45e3).unwrap()
        );
        let fig2 = Topology::new(1000.0, 10.0).unwrap();
        assert_relative_eq!(
            quick_f0_general(&fig2, SQRT_2, 1e6).unwrap(),
            101e6,
            max_relative = 1e-12
        );
        assert!(matches!(
            quick_f0_general(&fig2, 1.0, 1e6),
            Err(ModelError::InvalidRatio(_))
        ));
        assert!(matches!(
            quick_f0_general(&fig2, 0.5, 1e6),
            Err(ModelError::InvalidRatio(_))
        ));
    }

    #[test]
    fn quick_f0_recovers_device_from_half_gain_root() {
        let dev = DeviceParams::ideal(39.6e6).unwrap();
        let topo = fig1_topology();
        let y0 = closed_loop_gain(&dev, &topo, 0.0).magnitude();
        // independent bisection on |Υ(f)| − Y₀/2
        let (mut lo, mut hi) = (0.0, 1e9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if closed_loop_gain(&dev, &topo, mid).magnitude() > 0.5 * y0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let f_half = 0.5 * (lo + hi);
        assert_relative_eq!(
            quick_f0(&topo, f_half).unwrap(),
            dev.f0(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn crossover_relation_examples() {
        let fig2 = Topology::new(1000.0, 10.0).unwrap();
        assert_relative_eq!(
            crossover_from_minus3db(&fig2, 1e6).unwrap(),
            101e6,
            max_relative = 1e-12
        );
        assert_eq!(
            crossover_from_minus3db(&Topology::repeater(), 410e6).unwrap(),
            410e6
        );
        let equal = Topology::new(500.0, 500.0).unwrap();
        assert_eq!(crossover_from_minus3db(&equal, 5e6).unwrap(), 10e6);
        assert!(crossover_from_minus3db(&equal, -1.0).is_err());
    }

    #[test]
    fn half_power_root_is_beta_times_f0() {
        let dev = DeviceParams::ideal(97.73e6).unwrap();
        let topo = Topology::new(1000.0, 10.0).unwrap();
        let f = frequency_at_relative_gain(&dev, &topo, half_power_ratio()).unwrap();
        assert_relative_eq!(f, dev.f0() * topo.beta(), max_relative = 1e-12);
        assert!(frequency_at_relative_gain(&dev, &topo, 1.0).is_err());
    }

    #[test]
    fn minus_3db_gain_squared_mismatch() {
        let mismatch = minus_3db_ratio().powi(2) - half_power_ratio().powi(2);
        assert_eq!(format!("{mismatch:.2e}"), "1.19e-3");
    }

    proptest! {
        #[test]
        fn slope_of_regression_plane_is_inverse_f0_squared(
            f0 in 1e5f64..1e10, beta in 1e-4f64..1.0, f in 0.0f64..1e10,
        ) {
            let dev = DeviceParams::ideal(f0).unwrap();
            let topo = Topology::from_beta(beta).unwrap();
            let dv = inverse_gain_squared(&dev, &topo, f, InterceptMode::Ideal)
                - inverse_gain_squared(&dev, &topo, 0.0, InterceptMode::Ideal);
            let x = f / f0;
            prop_assert!((dv - x * x).abs() <= 1e-12 * (x * x).max(topo.beta().powi(2)));
        }

        #[test]
        fn closed_loop_magnitude_decreases(
            f0 in 1e5f64..1e10, beta in 1e-4f64..1.0, x in 1e-5f64..1e3, step in 1.001f64..10.0,
        ) {
            // x is f in units of the closed-loop bandwidth β·f₀
            let f = x * beta * f0;
            let dev = DeviceParams::ideal(f0).unwrap();
            let topo = Topology::from_beta(beta).unwrap();
            let a = closed_loop_gain(&dev, &topo, f).magnitude();
            let b = closed_loop_gain(&dev, &topo, f * step).magnitude();
            prop_assert!(b < a);
        }

        #[test]
        fn quick_f0_general_is_scale_covariant(
            ratio in 1.0f64..1e4, n in 1.01f64..20.0, f in 1.0f64..1e9,
        ) {
            let topo = Topology::new(ratio, 1.0).unwrap();
            let a = quick_f0_general(&topo, n, f).unwrap();
            let b = quick_f0_general(&topo, n, 2.0 * f).unwrap();
            prop_assert!((b - 2.0 * a).abs() <= 1e-14 * b);
        }
    }
}
