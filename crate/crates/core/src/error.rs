use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite gradient in layer `{layer}`")]
    NonFiniteGradient { layer: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("sparse index {index} out of bounds for layer `{layer}` of {len} parameters")]
    SparseIndex { layer: String, index: usize, len: usize },

    #[error("failed to parse IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("graph construction failed: {0}")]
    Graph(String),

    #[error("series too short: {0}")]
    SeriesTooShort(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
