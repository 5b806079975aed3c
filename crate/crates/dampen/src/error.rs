//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("invalid model spec: {0}")]
    InvalidModelSpec(String),

    #[error("input has {got} features, model expects {expected}")]
    InputDimMismatch { expected: usize, got: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what} file {path}: {detail}")]
    MalformedFile {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("checkpoint {path}: header declares {declared} parameters, spec requires {expected}")]
    ParamCountMismatch {
        path: PathBuf,
        declared: u64,
        expected: u64,
    },

    #[error("csv {path}: missing column '{column}'")]
    MissingColumn { path: PathBuf, column: String },

    #[error("csv {path}: row {row}, column '{column}': cannot parse '{value}'")]
    CsvCell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("csv {path}: no data rows")]
    EmptyCsv { path: PathBuf },

    #[error("csv {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("unknown class id {class} (dataset has {classes} classes)")]
    UnknownClass { class: usize, classes: usize },

    #[error("random fraction must be in (0,1), got {0}")]
    FractionOutOfRange(f64),

    #[error("index list is empty")]
    EmptyIndices,

    #[error("forget set is empty")]
    EmptyForgetSet,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("importance vectors disagree: {0}")]
    ImportanceMismatch(String),

    #[error("dampening config: {0} must be finite and positive")]
    InvalidDampening(&'static str),

    #[error("attack training data contains a single class")]
    SingleClassAttack,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code: 1 for configuration problems, 2 for runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::InvalidModelSpec(_)
            | Error::InvalidDampening(_)
            | Error::FractionOutOfRange(_)
            | Error::UnknownClass { .. }
            | Error::MissingColumn { .. } => 1,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
