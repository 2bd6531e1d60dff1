use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-positive dimension: {0:?}")]
    NonPositiveDimension([usize; 3]),

    #[error("spacing must be strictly positive and finite: {0:?}")]
    InvalidSpacing([f64; 3]),

    #[error("non-finite value at voxel {index}")]
    NonFinite { index: usize },

    #[error("data length {got} does not match dims (expected {expected})")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dims mismatch: {left:?} vs {right:?}")]
    DimsMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("mask label {label} at voxel {index} is not 0 or 1")]
    InvalidLabel { index: usize, label: u8 },

    #[error("empty mask")]
    EmptyMask,

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload size mismatch: header implies {expected} bytes, found {got}")]
    PayloadSizeMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need at least {needed} subjects, got {got}")]
    TooFewSubjects { needed: usize, got: usize },

    #[error("nothing to report")]
    NothingToReport,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
