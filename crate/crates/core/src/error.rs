use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing path: {0}")]
    MissingPath(PathBuf),

    #[error("bad feature header in {path}: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("payload size mismatch in {path}: expected {expected} bytes, found {found}")]
    PayloadSizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at segment {segment}, dim {dim}")]
    NonFinite { segment: usize, dim: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("attention row {row} has no allowed key")]
    FullyMaskedRow { row: usize },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("label file parse error at line {line}: {reason}")]
    LabelParse { line: usize, reason: String },

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthetic(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("probability out of [0,1]: {0}")]
    ProbabilityRange(f64),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("unknown video id `{0}`")]
    UnknownVideo(String),

    #[error("feature dimension mismatch for {modality}: checkpoint expects {expected}, dataset has {found}")]
    DimensionMismatch {
        modality: String,
        expected: usize,
        found: usize,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingPath(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag used by the command line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingPath(_) => "missing_path",
            Error::BadHeader { .. } => "bad_header",
            Error::PayloadSizeMismatch { .. } => "payload_size_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::Shape(_) => "shape",
            Error::FullyMaskedRow { .. } => "fully_masked_row",
            Error::InvalidLabel(_) => "invalid_label",
            Error::LabelParse { .. } => "label_parse",
            Error::InvalidSynthetic(_) => "invalid_synthetic",
            Error::Config { .. } => "config",
            Error::ProbabilityRange(_) => "probability_range",
            Error::Divergence { .. } => "divergence",
            Error::UnknownVariant(_) => "unknown_variant",
            Error::UnknownVideo(_) => "unknown_video",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
