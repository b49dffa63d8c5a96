use std::path::PathBuf;

use thiserror::Error;
use zian_tensor::checkpoint::CheckpointError;
use zian_tensor::TensorError;

#[derive(Debug, Error)]
pub enum ZianError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite values produced by {module}")]
    NonFinite { module: &'static str },
    #[error("input size {size} is not a multiple of {multiple} ({what})")]
    Indivisible {
        what: &'static str,
        size: usize,
        multiple: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("manifest row {row}: {msg}")]
    Manifest { row: usize, msg: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("length mismatch: {preds} predictions vs {gts} ground truths")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("training diverged at step {step} (non-finite loss); last good checkpoint: {checkpoint:?}")]
    Diverged {
        step: u64,
        checkpoint: Option<PathBuf>,
    },
}

pub type Result<T, E = ZianError> = std::result::Result<T, E>;

impl ZianError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
