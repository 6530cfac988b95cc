use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input file, schema violation, invalid configuration.
    Input,
    /// A statistical precondition does not hold (empty calibration, one-class AUROC, ...).
    Statistical,
    /// A broken internal invariant.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("record `{id}`: field `{field}`: {detail}")]
    Invariant {
        id: String,
        field: &'static str,
        detail: String,
    },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("need at least 2 records to split, got {0}")]
    TooFewRecords(usize),

    #[error("record `{0}` has no generation equivalent to its reference")]
    NoAdmissible(String),

    #[error("calibration set is empty after skipping {skipped} record(s) without an admissible generation")]
    EmptyCalibration { skipped: usize },

    #[error("test set is empty")]
    EmptyTest,

    #[error("AUROC undefined: only one class present among {0} labels")]
    SingleClass(usize),

    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },

    #[error("lexical similarity needs at least 2 generations, record has {0}")]
    InsufficientSamples(usize),

    #[error("generation index {index} out of range for M={m}")]
    IndexOutOfRange { index: usize, m: usize },

    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Invariant { .. }
            | Error::DuplicateId(_)
            | Error::InvalidConfig(_)
            | Error::InvalidSpec(_)
            | Error::Serialize(_) => ErrorClass::Input,
            Error::TooFewRecords(_)
            | Error::NoAdmissible(_)
            | Error::EmptyCalibration { .. }
            | Error::EmptyTest
            | Error::SingleClass(_)
            | Error::InsufficientSamples(_) => ErrorClass::Statistical,
            Error::LengthMismatch { .. } | Error::IndexOutOfRange { .. } => ErrorClass::Internal,
        }
    }
}
