use thiserror::Error;

use crate::state::BlockId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("quaternion norm {norm:e} is too small to normalize")]
    DegenerateQuaternion { norm: f64 },
    #[error("gravity sample norm {norm} m/s² is below 1 m/s²")]
    DegenerateGravity { norm: f64 },
    #[error("screen normal has horizontal projection {horizontal:.3} (< 0.1); device is lying flat")]
    DegenerateNormal { horizontal: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("time step {dt} s exceeds the 0.2 s gap limit")]
    GapTooLarge { dt: f64 },
    #[error("non-positive time step {dt} s")]
    NonPositiveDt { dt: f64 },
    #[error("covariance lost positive semi-definiteness at t = {t} s")]
    CovarianceNotPsd { t: f64 },
    #[error("filter diverged at t = {t} s: {reason}")]
    Diverged { t: f64, reason: String },
    #[error("innovation covariance is singular (condition {condition:e})")]
    SingularInnovation { condition: f64 },
    #[error("predicted covariance at step {step} is singular (condition {condition:e})")]
    SingularPredictedCovariance { step: usize, condition: f64 },
    #[error("unknown augmented block {0:?}")]
    UnknownBlock(BlockId),
    #[error("barometer update requires a reference that has not been set")]
    MissingReference,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(
        "estimate time range [{estimate_start}, {estimate_end}] is not covered by truth [{truth_start}, {truth_end}]"
    )]
    TimeRangeMismatch { estimate_start: f64, estimate_end: f64, truth_start: f64, truth_end: f64 },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: timestamp {t} is more than 10 ms before {previous}")]
    NonMonotoneTime { line: usize, t: f64, previous: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code reported by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::NonMonotoneTime { .. } | Error::GapTooLarge { .. } => 2,
            Error::CovarianceNotPsd { .. }
            | Error::Diverged { .. }
            | Error::SingularInnovation { .. }
            | Error::SingularPredictedCovariance { .. }
            | Error::DegenerateQuaternion { .. } => 3,
            Error::Config(_) | Error::InvalidScenario(_) => 4,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
