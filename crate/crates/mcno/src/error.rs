//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any mcno operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },

    #[error("sequence must be strictly increasing at position {position}")]
    NotStrictlyIncreasing { position: usize },

    #[error("coordinate {value} outside the periodic domain [0,1)")]
    CoordinateOutOfDomain { value: f64 },

    #[error("zero-norm truth row {row} in relative L2 loss")]
    ZeroNormTruth { row: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("non-finite value detected in {context}")]
    NonFinite { context: String },

    #[error(
        "advective stability violated: dt = {dt:.3e} exceeds limit {limit:.3e} \
         (max|u| = {max_abs_u:.3e}); reduce dt to at most {limit:.3e}"
    )]
    CflViolation { dt: f64, limit: f64, max_abs_u: f64 },

    #[error("solution blew up at step {step} of {total} (max|u| = {max_abs_u:.3e}); try a smaller step size")]
    BlowUp { step: usize, total: usize, max_abs_u: f64 },

    #[error("sample {sample} failed during dataset generation: {source}")]
    SampleFailed {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot draw {requested} distinct samples from a grid of {available} points")]
    TooManySamples { requested: usize, available: usize },

    #[error("non-finite gradient for parameter `{name}` at epoch {epoch}")]
    NonFiniteGradient { name: String, epoch: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    TrainDiverged { epoch: usize, batch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("quadrature did not converge: refinement changed the result by {delta:.3e} (tolerance {tol:.3e})")]
    QuadratureNotConverged { delta: f64, tol: f64 },

    #[error("declared constant {name} = {declared} is exceeded by sampled value {observed}")]
    ConstantViolated {
        name: &'static str,
        declared: f64,
        observed: f64,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u8, expected: u8 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
