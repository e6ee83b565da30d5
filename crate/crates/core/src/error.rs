//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {coords:?} lies outside the chart domain of model `{model}`")]
    OutsideChart { model: String, coords: Vec<f64> },

    #[error("spanning vectors are numerically dependent (gram determinant {gram_det:.3e})")]
    DegeneratePlane { gram_det: f64 },

    #[error("operation `{op}` is not available on model `{model}`")]
    UnsupportedModel { op: &'static str, model: String },

    #[error("field `{field}` failed the equivariance check: mismatch {mismatch:.3e} at {coords:?}")]
    NonEquivariant {
        field: String,
        mismatch: f64,
        coords: Vec<f64>,
    },

    #[error("integrator fault at t = {t}: {what}")]
    Integrator { t: f64, what: String },

    #[error("trajectory too short: need {needed} samples, have {have}")]
    InsufficientLength { needed: usize, have: usize },

    #[error("periodic-orbit search did not converge after {iterations} iterations (|step| = {last_step:.3e})")]
    NoOrbitFound { iterations: usize, last_step: f64 },

    #[error("invalid parameter `{name}`: {why}")]
    InvalidParameter { name: &'static str, why: String },
}

pub type Result<T> = std::result::Result<T, Error>;
