use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unknown artist `{0}`")]
    UnknownArtist(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("incomplete modality coverage: {0}")]
    IncompleteCoverage(String),

    #[error("artist `{0}` has no modality available")]
    NoModalityAvailable(String),

    #[error("artist `{0}` needs at least two modalities")]
    InsufficientModalities(String),

    #[error("projector has not been fitted")]
    UnfittedProjector,

    #[error("no embedding for artist `{0}`")]
    MissingEmbedding(String),

    #[error("no popularity entry for artist `{0}`")]
    MissingPopularity(String),

    #[error("artist `{0}` has no modality group")]
    UnassignedArtist(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unknown reference source `{0}`")]
    UnknownReference(String),

    #[error("unknown embedding source `{0}`")]
    UnknownSource(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
