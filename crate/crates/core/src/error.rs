//! Crate-wide error type.

use crate::parameter_inference::RelaxationTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grid too small: {nx} points per side, stencils need at least {min}")]
    GridTooSmall { nx: usize, min: usize },

    #[error("field spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("intensity must be strictly positive everywhere (min = {min:e})")]
    NonpositiveIntensity { min: f64 },

    #[error("invalid {what}: {why}")]
    InvalidParameter { what: &'static str, why: String },

    #[error("numerical blowup at step {step} (max |psi| = {max_abs:e})")]
    Blowup { step: usize, max_abs: f64 },

    #[error(
        "elliptic solver stalled after {cycles} cycles (residual {residual:e}, target {target:e})"
    )]
    SolverStalled {
        cycles: usize,
        residual: f64,
        target: f64,
    },

    #[error("phase retrieval diverged after {iterations} iterations")]
    RetrievalDiverged { iterations: usize },

    #[error("diffusion relaxation aborted at outer iteration {iteration}: {reason}")]
    RelaxationAborted {
        iteration: usize,
        reason: String,
        trace: Box<RelaxationTrace>,
    },

    #[error("inference aborted: {reason}")]
    InferenceAborted {
        reason: String,
        trace_up: Box<Option<RelaxationTrace>>,
        trace_down: Box<Option<RelaxationTrace>>,
    },

    #[error("no valid iso-intensity pairs ({0})")]
    NoValidPairs(&'static str),

    #[error("field is constant: {0}")]
    ConstantField(&'static str),

    #[error("empty measurement set")]
    EmptyMeasurementSet,

    #[error("plane is not spatially uniform (relative std {0:e} exceeds {1:e})")]
    NonUniformPlane(f64, f64),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {why}")]
    Format { path: String, why: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 0 success, 2 non-convergence,
    /// 3 numerical blowup, 4 IO/format/config.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Blowup { .. } => 3,
            Error::RetrievalDiverged { .. }
            | Error::SolverStalled { .. }
            | Error::RelaxationAborted { .. }
            | Error::InferenceAborted { .. } => 2,
            Error::Config(_) | Error::Format { .. } | Error::Io { .. } => 4,
            _ => 1,
        }
    }
}
