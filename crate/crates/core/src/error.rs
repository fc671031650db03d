use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("non-finite loss at step {step} (batch {batch}): dice={dice}, bce={bce}")]
    NonFiniteLoss {
        step: u64,
        batch: usize,
        dice: f64,
        bce: f64,
    },

    #[error("invalid value: {0}")]
    Value(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while reading or applying a pretrained weight archive.
#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("manifest {path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate tensor name `{0}` in manifest")]
    DuplicateName(String),
    #[error("tensor `{name}` starts at byte {offset}, expected {expected} (entries must be contiguous)")]
    Layout {
        name: String,
        offset: u64,
        expected: u64,
    },
    #[error("blob {path} holds {actual} bytes, manifest describes {expected}")]
    BlobSize {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("tensor `{source_name}` has shape {actual:?}, `{param}` expects {expected:?}")]
    ShapeMismatch {
        param: String,
        source_name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("translation table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error("unsupported dtype `{0}`")]
    DType(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("unpaired file {0}")]
    Unpaired(PathBuf),
    #[error("dimension mismatch for {path}: image {image:?}, mask {mask:?}")]
    DimensionMismatch {
        path: PathBuf,
        image: (u32, u32),
        mask: (u32, u32),
    },
    #[error("cannot read image {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0} is not a checkpoint file")]
    BadMagic(PathBuf),
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint {path} is corrupt: {message}")]
    Corrupt { path: PathBuf, message: String },
}
