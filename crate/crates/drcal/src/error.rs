use std::io;
use std::path::Path;

use drcal_core::protocol::{OperatorFailure, SessionError};
use drcal_core::CalibrationError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    /// An input file exists but does not parse or validate.
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("distributed run failed: {0:?}")]
    Operator(OperatorFailure),
    #[error("session: {0:?}")]
    Session(SessionError),
    #[error("network: {0}")]
    Net(String),
    /// Files that no longer match their manifest hashes.
    #[error("{} entries do not match the manifest", .0.len())]
    Mismatch(Vec<String>),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Input(_) => EXIT_USAGE,
            Error::Calibration(e) => calibration_code(e),
            Error::Operator(OperatorFailure::Calibration(e)) => calibration_code(e),
            _ => EXIT_OTHER,
        }
    }
}

fn calibration_code(e: &CalibrationError) -> i32 {
    if e.is_infeasible() {
        EXIT_INFEASIBLE
    } else if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        match e {
            CalibrationError::InvalidConfig(_)
            | CalibrationError::EmptyDataset
            | CalibrationError::DimensionMismatch(_)
            | CalibrationError::Uq(_) => EXIT_USAGE,
            _ => EXIT_OTHER,
        }
    }
}
