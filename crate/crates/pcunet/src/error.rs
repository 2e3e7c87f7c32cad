use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("voxel index {index:?} out of bounds for volume of shape {shape:?}")]
    OutOfBounds {
        index: (usize, usize, usize),
        shape: (usize, usize, usize),
    },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot crop empty mask")]
    EmptyMask,

    #[error("no isosurface: mask must contain both foreground and background voxels")]
    NoIsosurface,

    #[error("cloud has {have} points but {want} requested; refine the mesh or lower n")]
    CloudTooSmall { have: usize, want: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("head not present in variant {0}")]
    MissingHead(String),

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
