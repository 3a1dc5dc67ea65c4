use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid patch spec: {0}")]
    InvalidPatchSpec(String),

    #[error("phantom dims {0:?} too small, every axis needs at least {1} voxels")]
    PhantomTooSmall([usize; 3], usize),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: payload holds {found} elements but dims require {expected}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("unknown encoding tag {0:?}")]
    UnknownEncoding(String),

    #[error("expected encoding {expected:?}, file has {found:?}")]
    WrongEncoding { expected: String, found: String },

    #[error("voxel {0:?} is not covered by any patch")]
    Uncovered([usize; 3]),

    #[error("empty projection set")]
    EmptyProjections,

    #[error("malformed sidecar {}: {source}", path.display())]
    Sidecar {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
