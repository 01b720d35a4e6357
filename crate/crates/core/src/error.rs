use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("channel column {0} is all zero")]
    ZeroChannel(usize),

    #[error("zf_undefined: {0}")]
    ZfUndefined(String),

    #[error("singular diagonal in power recovery: |h_k^H u_k| = 0 for user {user}")]
    SingularDiagonal { user: usize },

    #[error("degenerate output: decoded column {column} has norm {norm:e}")]
    DegenerateOutput { column: usize, norm: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch of size {0} cannot be normalized in training mode")]
    DegenerateBatch(usize),

    #[error("non-finite gradient in parameter group {0}")]
    NonFiniteGradient(usize),

    #[error("empty input")]
    Empty,

    #[error("need at least {needed} usable samples, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("singular matrix")]
    Singular,

    #[error("line {line}: field `{field}`: {detail}")]
    Malformed {
        line: usize,
        field: String,
        detail: String,
    },

    /// Data and model (or data and data) disagree on shape or parameters.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("no model for {encoding} at {gamma_db} dB")]
    MissingModel { encoding: String, gamma_db: f64 },

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
