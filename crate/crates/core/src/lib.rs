//! Crossover frequency of operational amplifiers from closed-loop gain sweeps.
//!
//! * [`model`]: single-pole op-amp parameters, circuit topology and the
//!   closed-form closed-loop response.
//! * [`sim`]: time-domain integration of the amplifier and lock-in
//!   demodulation, producing synthetic sweeps.
//! * [`extract`]: the `(f², 1/Y²)` regression and the quick half-gain method.
//! * [`dist`]: batch statistics, ECDF and normal-fit diagnostics.
//! * [`io`]: CSV and config file formats used by the command-line tool.
//! * [`cli`]: the `opamp-crossover` subcommands.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dist;
pub mod extract;
pub mod io;
pub mod model;
pub mod regression;
pub mod sim;

pub use extract::{fit_f0, quick_fit_f0, FitResult, SweepPoint, SweepRecord};
pub use model::{closed_loop_gain, DeviceParams, Topology};
