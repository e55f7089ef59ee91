//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid quadrature parameter: {0}")]
    InvalidQuadrature(String),

    #[error("adaptive integration did not converge within budget: partial value {partial}, error estimate {error_estimate}, requested tolerance {tolerance}")]
    NonConvergent {
        partial: f64,
        error_estimate: f64,
        tolerance: f64,
    },

    #[error("invalid cross section: {0}")]
    InvalidCrossSection(String),

    #[error("invalid kernel parameter: {0}")]
    InvalidKernel(String),

    #[error("sigma must be a unit vector (|sigma| = {0})")]
    NonUnitSigma(f64),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("moment table is missing entries: {0}")]
    MissingEntries(String),

    #[error("invalid moment operation: {0}")]
    InvalidMoment(String),

    #[error("invalid hierarchy configuration: {0}")]
    InvalidHierarchy(String),

    #[error("ODE integration failed: {0}")]
    OdeFailure(String),

    #[error("particle sampling failed: {0}")]
    SamplingFailure(String),

    #[error("DSMC step failed: {0}")]
    StepFailure(String),
}
