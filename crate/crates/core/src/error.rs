use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Hadamard order {0}: must be a positive power of two")]
    InvalidOrder(usize),

    #[error("invalid code length {0}: must be at least 1")]
    InvalidLength(usize),

    #[error("invalid label for sample {sample}: {reason}")]
    InvalidLabel { sample: usize, reason: String },

    #[error(
        "hash centers failed separation audit after {attempts} attempts: average distance {average:.4} < {threshold:.4}"
    )]
    CenterSeparation {
        average: f64,
        threshold: f64,
        attempts: usize,
    },

    #[error("requested {requested} anchors but only {available} samples are available")]
    InsufficientSamples { requested: usize, available: usize },

    #[error("insufficient training data: {0} samples (need at least 2)")]
    InsufficientData(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid anchor set: {0}")]
    InvalidAnchorSet(String),

    #[error("modality weight vector contains a non-positive entry")]
    DegenerateWeight,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("every modality is missing from the batch")]
    EmptyBatch,

    #[error("invalid cutoff {0}")]
    InvalidCutoff(usize),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("file kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: u8, found: u8 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable short identifier used in machine-parsable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidOrder(_) => "invalid-order",
            Error::InvalidLength(_) => "invalid-length",
            Error::InvalidLabel { .. } => "invalid-label",
            Error::CenterSeparation { .. } => "center-separation",
            Error::InsufficientSamples { .. } => "insufficient-samples",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Shape(_) => "shape",
            Error::InvalidAnchorSet(_) => "invalid-anchor-set",
            Error::DegenerateWeight => "degenerate-weight",
            Error::Numerical(_) => "numerical",
            Error::EmptyBatch => "empty-batch",
            Error::InvalidCutoff(_) => "invalid-cutoff",
            Error::Invalid(_) => "invalid",
            Error::Corrupt(_) => "corrupt-file",
            Error::KindMismatch { .. } => "kind-mismatch",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}
