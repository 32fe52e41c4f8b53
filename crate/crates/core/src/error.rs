use std::path::PathBuf;

use crate::tensor::{DType, Shape};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape([usize; 4]),

    #[error("buffer of length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Shape, actual: Shape },

    #[error("{op}: {msg}")]
    Incompatible { op: &'static str, msg: String },

    #[error("{op}: spatial dims {h}x{w} must both be even")]
    OddSpatial { op: &'static str, h: usize, w: usize },

    #[error("invalid range: lo ({lo}) must be < hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("invalid convolution: {0}")]
    InvalidConv(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("joint upsampling is ill-posed: {0}")]
    IllPosed(String),

    #[error("unknown backbone preset {0:?}")]
    UnknownPreset(String),

    #[error("non-finite loss {value} at step {step}")]
    NonFinite { step: usize, value: f64 },

    #[error("dtype mismatch: expected {expected}, file holds {actual}")]
    DTypeMismatch { expected: DType, actual: DType },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn incompatible(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Incompatible {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
