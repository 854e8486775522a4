//! Recovery of structured signals from dithered, quantized linear measurements
//! with the Generalized Lasso.
//!
//! * [`ensemble`]: sparse / low-rank ground truth and sub-gaussian matrices.
//! * [`quantizer`]: mid-riser and one-bit quantizers, dither, measurement channels.
//! * [`geometry`]: constraint sets, projections, Gaussian-width bounds.
//! * [`solver`]: projected gradient descent for the G-Lasso and the
//!   back-projection baselines.
//! * [`experiment`]: Monte Carlo curves, Δ sweeps, rate fits, moment checks.

pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod quantizer;
pub mod rng;
pub mod solver;
pub mod stats;

pub use ensemble::{Ensemble, EnsembleKind, MeasurementMatrix, SignalSpec, Structure};
pub use error::{Error, Result};
pub use experiment::{
    CurvePoint, DeltaSweep, ErrorCurve, Estimator, ExperimentConfig, MomentReport, QuantizerSpec, RateFit, RateModel,
};
pub use geometry::{ConeDiagnostics, ConstraintSet};
pub use quantizer::{DitherKind, QuantizedObservations, QuantizerConfig};
pub use solver::{GLassoProblem, SolverOptions, SolverResult, StepRule};
pub use stats::MeanEstimate;

pub use nalgebra::{DMatrix, DVector};
