use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("label value {value} at voxel {index} is outside 0..=3")]
    InvalidLabel { index: usize, value: i64 },

    #[error("empty mask")]
    EmptyMask,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed NIfTI header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("missing sequence `{sequence}` for case {case_id} (expected {path})")]
    MissingSequence {
        case_id: String,
        sequence: String,
        path: PathBuf,
    },

    #[error("geometry mismatch in case {case_id}: {detail}")]
    GeometryMismatch { case_id: String, detail: String },

    #[error("missing weight for model `{0}`")]
    MissingWeight(String),

    #[error("NaN value in input")]
    NanInput,

    #[error("not enough samples: need at least {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("phantom lesions do not fit in the volume: {0}")]
    LesionOutOfBounds(String),

    #[error("policy has no entry for cluster {0}")]
    MissingCluster(usize),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
