//! Rate-equation simulation of NV⁻ optical readout and online optimization
//! of the readout laser waveform.
//!
//! The pipeline runs bottom-up: [`photophysics`] defines the five-level
//! model, [`waveform`] the piecewise-constant drive, [`pump`] integrates
//! photon traces for a full init/wait/readout sequence, [`metrics`] scores
//! them, [`optimizer`] searches waveform amplitudes, and [`harness`] and
//! [`rabi`] tie everything into experiments.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod optimizer;
pub mod photophysics;
pub mod pump;
pub mod rabi;
pub mod waveform;

pub use error::{Error, Result};
pub use harness::{
    run_olo, run_sweep, Grid, Metric, OloResult, OloSpec, PulsePair, SweepMode, SweepResult,
    SweepSpec,
};
pub use metrics::{contrast, fit_sinusoid, mean_deviation, snr, SinusoidFit};
pub use optimizer::{hj_optimize, OptimizerConfig, OptimizerState, QueryContext, SeedPolicy};
pub use photophysics::{AmplitudeMap, Level, MapShape, Populations, RateMatrix, RateParams};
pub use pump::{
    simulate_pair, simulate_pump, PumpSimulator, PumpTrace, SequenceConfig, WindowCounts,
};
pub use rabi::{
    compare_schemes, simulate_rabi, RabiComparison, RabiConfig, RabiCurve, RabiScheme, SchemeKind,
};
pub use waveform::{AmplitudeBounds, PiecewiseWaveform};
