use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("graph already differentiated; record a new forward pass first")]
    StaleGraph,

    #[error("backward seed must be a scalar node, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("confidence grids missing; run the confidence preprocessing step first")]
    MissingConfidences,

    #[error("at least two classes required, found {0}")]
    DegenerateClasses(usize),

    #[error("enumeration needs {needed} sequences, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("bad magic {0:?}, expected \"VFG1\"")]
    BadMagic([u8; 4]),

    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated payload: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("checksum mismatch: header {expected:#018x}, payload {found:#018x}")]
    ChecksumMismatch { expected: u64, found: u64 },

    #[error("shape {shape}: expected {expected} rows, found {found}")]
    RowCount {
        shape: String,
        expected: usize,
        found: usize,
    },

    #[error("shape {shape}: row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        shape: String,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("shape {shape}: unknown label {label:?}")]
    UnknownLabel { shape: String, label: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed or missing input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyDataset
                | Error::MissingConfidences
                | Error::DegenerateClasses(_)
                | Error::BadMagic(_)
                | Error::UnsupportedVersion(_)
                | Error::CorruptHeader(_)
                | Error::Truncated { .. }
                | Error::ChecksumMismatch { .. }
                | Error::RowCount { .. }
                | Error::RaggedRow { .. }
                | Error::UnknownLabel { .. }
                | Error::Parse { .. }
                | Error::LabelOutOfRange { .. }
                | Error::Io(_)
        )
    }
}
