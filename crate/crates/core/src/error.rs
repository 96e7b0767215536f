use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Unrecognized magic, version, or file layout.
    #[error("format error: {0}")]
    Format(String),

    /// Payload shorter or longer than the header declares.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Every paired difference is zero; no test statistic exists.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("cannot resolve {path}: referenced from {context}")]
    Resolution { path: PathBuf, context: String },

    /// A per-image failure during study evaluation.
    #[error("image {image_id:?}{}: {source}", method_id.as_ref().map(|m| format!(", method {m:?}")).unwrap_or_default())]
    InImage {
        image_id: String,
        method_id: Option<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True when the failure came from the filesystem rather than the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Resolution { .. } => true,
            Error::InImage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
