//! Output-only identification and compensation of static nonlinearities.
//!
//! A memoryless plant `y = f(x + n)` amplifies input noise by its local
//! slope, so the noise seen at the output maps the differential gain
//! across the output range. This crate estimates that map and builds
//! compensating functions from it, offline and in two streaming variants
//! (floating-point basis-function model and integer piecewise-linear model),
//! together with the signal generation, filtering and metrics around them.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsp;
pub mod error;
pub mod ident;
pub mod metrics;
pub mod pwl;
pub mod rbf;
pub mod signal;

pub use dsp::{butterworth2_lowpass, BiquadCoeffs, BiquadState, BlockAccumulator, BlockStats};
pub use error::{Error, Result};
pub use ident::{
    estimate_sigma_profile, integrate_inverse, InverseTable, LinearityReport, Normalization,
    SigmaProfile, Stimulus,
};
pub use metrics::{
    rms_linearity_error, thd, thd_averaged, thd_improvement, Compensator, ThdReport,
};
pub use pwl::{run_pipeline_fixed, PwlConfig, PwlModel, PwlPipeline, PwlTelemetry};
pub use rbf::{
    run_pipeline, QuadSegmentTable, RbfConfig, RbfModel, RbfPipeline, RbfPipelineConfig,
    RbfTelemetry,
};
pub use signal::{NoiseSpec, NonlinearityKind, NonlinearityModel, SignalFrame};
