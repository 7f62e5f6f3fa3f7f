use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(
        "calibration missed tolerance: achieved P_FA {achieved:.5} vs target {target:.5} \
         (±{tolerance}); at least {required} noise-only scores are required"
    )]
    CalibrationTolerance {
        achieved: f64,
        target: f64,
        tolerance: f64,
        required: usize,
    },

    #[error("calibration needs at least {required} noise-only scores, got {actual}")]
    InsufficientSamples { required: usize, actual: usize },

    #[error("curve never crosses P_d = {target}: saturated curve")]
    SaturatedCurve { target: f64 },

    #[error("checksum mismatch for {path}: manifest {expected}, file {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("train/validation leakage: {0}")]
    Leakage(String),

    #[error("output already exists: {0}")]
    DuplicateOutput(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::CalibrationTolerance { .. } | Error::InsufficientSamples { .. } => 3,
            Error::Checksum { .. }
            | Error::Version { .. }
            | Error::Format { .. }
            | Error::Leakage(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
