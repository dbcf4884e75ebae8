//! Time-domain integration of the op-amp master equation for a driven
//! non-inverting amplifier, and a virtual lock-in that recovers amplitudes
//! from the simulated waveforms.
//!
//! With `U₊ = U_I` and `U₋ = β·U₀` the master equation
//! `U₊ − U₋ = (1/G₀ + τ₀·d/dt)·U₀` becomes the linear ODE
//!
//! ```text
//! dU₀/dt = (U_I − (β + 1/G₀)·U₀) / τ₀
//! ```
//!
//! which is integrated with fixed-step classical Runge–Kutta.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::extract::{RecordMeta, SweepPoint, SweepRecord};
use crate::model::{DeviceParams, Topology};

/// RK4 steps per closed-loop time constant used by [`SimConfig::resolved_for`].
const STEPS_PER_TIME_CONSTANT: f64 = 32.0;
/// Settling time in closed-loop time constants.
const SETTLE_TIME_CONSTANTS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid stimulus: {0}")]
    InvalidStimulus(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid sweep plan: {0}")]
    InvalidPlan(String),
    #[error("invalid time series: {0}")]
    InvalidSeries(String),
    #[error("state became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("time series covers {periods} reference periods, not a whole number")]
    PartialPeriod { periods: f64 },
    #[error("at {frequency} Hz: {source}")]
    AtFrequency {
        frequency: f64,
        #[source]
        source: Box<SimError>,
    },
}

/// Sinusoidal test signal `U_I(t) = A·sin(2πft)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stimulus {
    amplitude: f64,
    frequency: f64,
}

impl Stimulus {
    pub fn sine(amplitude: f64, frequency: f64) -> Result<Self, SimError> {
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(SimError::InvalidStimulus(format!(
                "amplitude must be finite and > 0, got {amplitude}"
            )));
        }
        if !(frequency.is_finite() && frequency > 0.0) {
            return Err(SimError::InvalidStimulus(format!(
                "frequency must be finite and > 0, got {frequency}"
            )));
        }
        Ok(Self {
            amplitude,
            frequency,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * t).sin()
    }

    /// Samples `len` points spaced `dt` apart starting at `start`.
    pub fn sample(&self, start: f64, dt: f64, len: usize) -> Result<TimeSeries, SimError> {
        let samples = (0..len)
            .map(|k| self.value_at(start + k as f64 * dt))
            .collect();
        TimeSeries::new(dt, samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub steps_per_period: usize,
    pub settle_periods: usize,
    pub measure_periods: usize,
    /// Op-amp of the unity-gain repeater stage ahead of the divider. `None`
    /// models that stage as an ideal pass-through.
    pub buffer: Option<DeviceParams>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps_per_period: 256,
            settle_periods: 5,
            measure_periods: 2,
            buffer: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.steps_per_period < 64 {
            return Err(SimError::InvalidConfig(format!(
                "steps_per_period must be >= 64, got {}",
                self.steps_per_period
            )));
        }
        if self.settle_periods < 1 {
            return Err(SimError::InvalidConfig(
                "settle_periods must be >= 1".into(),
            ));
        }
        if self.measure_periods < 1 {
            return Err(SimError::InvalidConfig(
                "measure_periods must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Raises the step count and settling length where the stimulus period
    /// is long compared to the circuit's closed-loop time constant(s).
    ///
    /// Guarantees at least 32 RK4 steps per closed-loop time constant and a
    /// settling interval of at least ten time constants. The configured
    /// values act as lower bounds.
    pub fn resolved_for(&self, dev: &DeviceParams, topo: &Topology, frequency: f64) -> Self {
        let mut tau = closed_loop_time_constant(dev, topo);
        if let Some(buf) = &self.buffer {
            tau = tau.min(closed_loop_time_constant(buf, &Topology::repeater()));
        }
        let period = 1.0 / frequency;
        let steps = (STEPS_PER_TIME_CONSTANT * period / tau).ceil() as usize;
        let settle =
            (SETTLE_TIME_CONSTANTS * closed_loop_time_constant(dev, topo) / period).ceil() as usize;
        Self {
            steps_per_period: self.steps_per_period.max(steps),
            settle_periods: self.settle_periods.max(settle),
            measure_periods: self.measure_periods,
            buffer: self.buffer,
        }
    }
}

/// Closed-loop time constant `τ₀/(β + 1/G₀)`.
pub fn closed_loop_time_constant(dev: &DeviceParams, topo: &Topology) -> f64 {
    dev.tau0() / (topo.beta() + dev.inverse_g0())
}

/// Uniformly sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dt: f64,
    samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dt: f64, samples: Vec<f64>) -> Result<Self, SimError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SimError::InvalidSeries(format!(
                "dt must be finite and > 0, got {dt}"
            )));
        }
        if samples.is_empty() {
            return Err(SimError::InvalidSeries("no samples".into()));
        }
        Ok(Self { dt, samples })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }

    /// Largest absolute sample.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `dU₀/dt` of the non-inverting amplifier for instantaneous input and output.
pub fn closed_loop_ode_rhs(dev: &DeviceParams, topo: &Topology, u_in: f64, u_out: f64) -> f64 {
    (u_in - (topo.beta() + dev.inverse_g0()) * u_out) / dev.tau0()
}

fn rk4_step<const N: usize>(
    t: f64,
    y: [f64; N],
    h: f64,
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
) -> [f64; N] {
    let axpy = |y: &[f64; N], k: &[f64; N], a: f64| {
        let mut out = *y;
        for (o, k) in out.iter_mut().zip(k) {
            *o += a * k;
        }
        out
    };
    let k1 = f(t, &y);
    let k2 = f(t + 0.5 * h, &axpy(&y, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &axpy(&y, &k2, 0.5 * h));
    let k4 = f(t + h, &axpy(&y, &k3, h));
    let mut out = y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Integrates the amplifier (and optional repeater stage) from rest under an
/// arbitrary input `u_in(t)`, returning the amplifier output at steps
/// `record_from..=steps`.
///
/// The input passes through the repeater (ideal when `buffer` is `None`),
/// then the topology's divider, then the amplifier.
pub fn integrate(
    dev: &DeviceParams,
    topo: &Topology,
    buffer: Option<&DeviceParams>,
    u_in: impl Fn(f64) -> f64,
    dt: f64,
    steps: usize,
    record_from: usize,
) -> Result<Vec<f64>, SimError> {
    let attenuation = topo.divider_ratio();
    let repeater = Topology::repeater();
    let mut out = Vec::with_capacity((steps + 1).saturating_sub(record_from));
    if record_from == 0 {
        out.push(0.0);
    }
    match buffer {
        None => {
            let rhs = |t: f64, y: &[f64; 1]| {
                [closed_loop_ode_rhs(dev, topo, attenuation * u_in(t), y[0])]
            };
            let mut y = [0.0];
            for step in 1..=steps {
                y = rk4_step((step - 1) as f64 * dt, y, dt, rhs);
                if !y[0].is_finite() {
                    return Err(SimError::NonFinite { step });
                }
                if step >= record_from {
                    out.push(y[0]);
                }
            }
        }
        Some(buf) => {
            let rhs = |t: f64, y: &[f64; 2]| {
                [
                    closed_loop_ode_rhs(buf, &repeater, u_in(t), y[0]),
                    closed_loop_ode_rhs(dev, topo, attenuation * y[0], y[1]),
                ]
            };
            let mut y = [0.0, 0.0];
            for step in 1..=steps {
                y = rk4_step((step - 1) as f64 * dt, y, dt, rhs);
                if !(y[0].is_finite() && y[1].is_finite()) {
                    return Err(SimError::NonFinite { step });
                }
                if step >= record_from {
                    out.push(y[1]);
                }
            }
        }
    }
    Ok(out)
}

/// Drives the circuit from `U₀(0) = 0`, discards `settle_periods` and
/// returns the next `measure_periods` of output (both ends included).
///
/// `cfg` is used as given; see [`SimConfig::resolved_for`] for a step size
/// matched to the circuit.
pub fn simulate_steady_state(
    dev: &DeviceParams,
    topo: &Topology,
    stim: &Stimulus,
    cfg: &SimConfig,
) -> Result<TimeSeries, SimError> {
    cfg.validate()?;
    let dt = stim.period() / cfg.steps_per_period as f64;
    let record_from = cfg.settle_periods * cfg.steps_per_period;
    let steps = record_from + cfg.measure_periods * cfg.steps_per_period;
    let out = integrate(
        dev,
        topo,
        cfg.buffer.as_ref(),
        |t| stim.value_at(t),
        dt,
        steps,
        record_from,
    )?;
    TimeSeries::new(dt, out)
}

/// Stimulus samples over the same window [`simulate_steady_state`] records.
pub fn stimulus_window(stim: &Stimulus, cfg: &SimConfig) -> Result<TimeSeries, SimError> {
    let dt = stim.period() / cfg.steps_per_period as f64;
    let start = (cfg.settle_periods * cfg.steps_per_period) as f64 * dt;
    stim.sample(start, dt, cfg.measure_periods * cfg.steps_per_period + 1)
}

/// Amplitude of the `reference_f` component of `ts`, from in-phase and
/// quadrature projections integrated by the trapezoidal rule.
///
/// The series must span a whole number of reference periods to within one
/// sample.
pub fn lockin_demodulate(ts: &TimeSeries, reference_f: f64) -> Result<f64, SimError> {
    if !(reference_f.is_finite() && reference_f > 0.0) {
        return Err(SimError::InvalidSeries(format!(
            "reference frequency must be finite and > 0, got {reference_f}"
        )));
    }
    let samples = ts.samples();
    if samples.len() < 2 {
        return Err(SimError::PartialPeriod { periods: 0.0 });
    }
    let duration = ts.duration();
    let periods = duration * reference_f;
    if periods.round() < 1.0 || (periods - periods.round()).abs() > ts.dt() * reference_f {
        return Err(SimError::PartialPeriod { periods });
    }

    let omega = 2.0 * PI * reference_f;
    let last = samples.len() - 1;
    let (mut i_sum, mut q_sum) = (0.0, 0.0);
    for (k, &x) in samples.iter().enumerate() {
        let w = if k == 0 || k == last { 0.5 } else { 1.0 };
        let phase = omega * k as f64 * ts.dt();
        i_sum += w * x * phase.cos();
        q_sum += w * x * phase.sin();
    }
    let scale = 2.0 * ts.dt() / duration;
    Ok((scale * i_sum).hypot(scale * q_sum))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// Frequencies of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPlan {
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
    pub spacing: Spacing,
}

impl Default for SweepPlan {
    /// 512 linearly spaced points from 10 kHz to 100 kHz.
    fn default() -> Self {
        Self {
            f_min: 10e3,
            f_max: 100e3,
            n_points: 512,
            spacing: Spacing::Linear,
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_points < 3 {
            return Err(SimError::InvalidPlan(format!(
                "need at least 3 points, got {}",
                self.n_points
            )));
        }
        if !(self.f_min.is_finite() && self.f_min > 0.0) {
            return Err(SimError::InvalidPlan(format!(
                "f_min must be finite and > 0, got {}",
                self.f_min
            )));
        }
        if !(self.f_max.is_finite() && self.f_max > self.f_min) {
            return Err(SimError::InvalidPlan(format!(
                "f_max must be finite and > f_min, got {}",
                self.f_max
            )));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let last = (self.n_points - 1) as f64;
        (0..self.n_points)
            .map(|i| {
                let x = i as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.f_min + (self.f_max - self.f_min) * x,
                    Spacing::Log => self.f_min * (self.f_max / self.f_min).powf(x),
                }
            })
            .collect()
    }
}

/// Multiplicative Gaussian error on each measured gain, `y·(1 + ε)`,
/// `ε ~ Normal(0, sigma_rel)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    pub sigma_rel: f64,
}

impl NoiseModel {
    pub const NONE: Self = Self { sigma_rel: 0.0 };
    /// The ~3 % amplitude-reading scatter of an oscilloscope measurement.
    pub const OSCILLOSCOPE: Self = Self { sigma_rel: 0.03 };

    pub fn new(sigma_rel: f64) -> Result<Self, SimError> {
        if !(sigma_rel.is_finite() && sigma_rel >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "noise sigma_rel must be finite and >= 0, got {sigma_rel}"
            )));
        }
        Ok(Self { sigma_rel })
    }

    /// Relative error factor `1 + ε` for sweep point `index`. The draw
    /// depends only on `(seed, index)`.
    pub fn factor(&self, seed: u64, index: usize) -> f64 {
        if self.sigma_rel == 0.0 {
            return 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let normal = Normal::new(0.0, self.sigma_rel).expect("sigma_rel validated");
        1.0 + normal.sample(&mut rng)
    }
}

/// Simulated gain `A_out/A_in` at one frequency, end to end through the
/// optional repeater and divider.
pub fn measure_gain(
    dev: &DeviceParams,
    topo: &Topology,
    frequency: f64,
    cfg: &SimConfig,
) -> Result<f64, SimError> {
    let wrap = |e| SimError::AtFrequency {
        frequency,
        source: Box::new(e),
    };
    let stim = Stimulus::sine(1.0, frequency).map_err(wrap)?;
    let cfg = cfg.resolved_for(dev, topo, frequency);
    let out = simulate_steady_state(dev, topo, &stim, &cfg).map_err(wrap)?;
    let input = stimulus_window(&stim, &cfg).map_err(wrap)?;
    let a_out = lockin_demodulate(&out, frequency).map_err(wrap)?;
    let a_in = lockin_demodulate(&input, frequency).map_err(wrap)?;
    Ok(a_out / a_in)
}

/// Noise-free simulated gains for every frequency of `plan`, evaluated in
/// parallel.
pub fn simulate_sweep(
    dev: &DeviceParams,
    topo: &Topology,
    plan: &SweepPlan,
    cfg: &SimConfig,
) -> Result<Vec<SweepPoint>, SimError> {
    plan.validate()?;
    cfg.validate()?;
    plan.frequencies()
        .into_par_iter()
        .map(|f| measure_gain(dev, topo, f, cfg).map(|y| SweepPoint { f, y }))
        .collect()
}

/// Applies the seeded noise model to noise-free points.
pub fn apply_noise(clean: &[SweepPoint], noise: &NoiseModel, seed: u64) -> Vec<SweepPoint> {
    clean
        .iter()
        .enumerate()
        .map(|(i, p)| SweepPoint {
            f: p.f,
            y: p.y * noise.factor(seed, i),
        })
        .collect()
}

/// Full synthetic measurement: simulate each sweep frequency, demodulate,
/// and apply seeded measurement noise.
pub fn run_sweep(
    dev: &DeviceParams,
    topo: &Topology,
    plan: &SweepPlan,
    noise: &NoiseModel,
    cfg: &SimConfig,
    seed: u64,
) -> Result<SweepRecord, SimError> {
    let clean = simulate_sweep(dev, topo, plan, cfg)?;
    noisy_record(&clean, topo, noise, seed)
}

/// Wraps noisy points as a record carrying the topology.
pub fn noisy_record(
    clean: &[SweepPoint],
    topo: &Topology,
    noise: &NoiseModel,
    seed: u64,
) -> Result<SweepRecord, SimError> {
    let meta = RecordMeta {
        topology: Some(*topo),
        label: Some("synthetic".into()),
    };
    SweepRecord::new(apply_noise(clean, noise, seed), meta)
        .map_err(|e| SimError::InvalidPlan(format!("noise produced an invalid record: {e}")))
}
