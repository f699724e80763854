//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A knob vector is missing a dimension required by its space.
    #[error("knob vector is missing dimension `{0}`")]
    MissingDim(String),

    /// A knob name does not exist in the space.
    #[error("unknown knob `{0}`")]
    UnknownKnob(String),

    /// A value fell outside the bounds of its dimension.
    #[error("value {value} for `{dim}` outside [{min}, {max}]")]
    OutOfBounds {
        dim: String,
        value: i64,
        min: i64,
        max: i64,
    },

    /// Percentiles were requested over zero successful samples.
    #[error("no successful samples in segment")]
    NoSuccessfulSamples,

    /// A caller-supplied argument violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A config field failed validation.
    #[error("config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Config file could not be parsed.
    #[error("failed to parse config {path}: {source}")]
    ConfigParse {
        path: String,
        #[source]
        source: toml::de::Error,
    },

    /// The simulator cannot terminate or was misconfigured.
    #[error("simulator: {0}")]
    Simulator(String),

    /// A measurement segment failed (server startup, transport, all requests failed).
    #[error("segment failed: {0}")]
    SegmentFailed(String),

    /// Errors from exported or imported result files, with path context.
    #[error("{path}: {reason}")]
    FileFormat { path: String, reason: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Http(#[from] reqwest::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn file_format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::FileFormat {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
