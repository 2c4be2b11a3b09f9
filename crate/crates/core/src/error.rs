use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate orientation: {0}")]
    DegenerateOrientation(String),

    #[error("point is behind the camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },

    #[error("viewing ray through pixel ({u:.3}, {v:.3}) does not reach the ground")]
    Horizon { u: f64, v: f64 },

    #[error("quaternion mean is degenerate (norm {norm:.3e})")]
    DegenerateMean { norm: f64 },

    #[error("pose grid is empty: {0}")]
    EmptyGrid(String),

    #[error("no part of the ground plane is visible")]
    NoGroundVisible,

    #[error("trajectory generation failed for {pose} after {retries} attempts")]
    GenerationFailure { pose: String, retries: usize },

    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("input outside the image domain: {0}")]
    InputDomain(String),

    #[error("predicted quaternion is degenerate (norm {norm:.3e})")]
    DegenerateQuaternion { norm: f64 },

    #[error("no trajectory produced a prediction ({rejected} rejected)")]
    NoPrediction { rejected: usize },

    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("corrupt file {path}: {message}")]
    CorruptFile { path: PathBuf, message: String },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used as the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateOrientation(_) => "E_DEGENERATE_ORIENTATION",
            Error::BehindCamera { .. } => "E_BEHIND_CAMERA",
            Error::Horizon { .. } => "E_HORIZON",
            Error::DegenerateMean { .. } => "E_DEGENERATE_MEAN",
            Error::EmptyGrid(_) => "E_EMPTY_GRID",
            Error::NoGroundVisible => "E_NO_GROUND_VISIBLE",
            Error::GenerationFailure { .. } => "E_GENERATION_FAILURE",
            Error::ShapeMismatch { .. } => "E_SHAPE_MISMATCH",
            Error::NumericFailure(_) => "E_NUMERIC_FAILURE",
            Error::InputDomain(_) => "E_INPUT_DOMAIN",
            Error::DegenerateQuaternion { .. } => "E_DEGENERATE_QUATERNION",
            Error::NoPrediction { .. } => "E_NO_PREDICTION",
            Error::MalformedRow { .. } => "E_MALFORMED_ROW",
            Error::CorruptFile { .. } => "E_CORRUPT_FILE",
            Error::VersionMismatch { .. } => "E_VERSION_MISMATCH",
            Error::Config(_) => "E_CONFIG",
            Error::InvalidArgument(_) => "E_INVALID_ARGUMENT",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }
}
