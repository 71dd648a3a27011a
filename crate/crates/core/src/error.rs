use std::path::PathBuf;

/// Errors surfaced by every stage of the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in document `{doc_id}`, field `{field}`: {message}")]
    Parse {
        doc_id: String,
        field: String,
        message: String,
    },

    #[error("schema error for attribute `{attribute}`: {message}")]
    Schema { attribute: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("capacity error: need {needed} documents, have {available}")]
    Capacity { needed: usize, available: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("backend error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Backend {
        status: Option<u16>,
        message: String,
    },

    #[error("cache miss for digest {digest}")]
    CacheMiss { digest: String },

    #[error("document `{doc_id}` chunk {chunk}: {source}")]
    Pipeline {
        doc_id: String,
        chunk: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(doc_id: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            doc_id: doc_id.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn schema(attribute: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            attribute: attribute.into(),
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Error::Usage(message.into())
    }

    pub fn backend(status: Option<u16>, message: impl Into<String>) -> Self {
        Error::Backend {
            status,
            message: message.into(),
        }
    }

    /// Attach the document and chunk a failure happened in.
    pub fn in_chunk(self, doc_id: &str, chunk: usize) -> Self {
        match self {
            e @ Error::Pipeline { .. } => e,
            e => Error::Pipeline {
                doc_id: doc_id.to_string(),
                chunk,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by the caller rather than the environment.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Usage(_) | Error::Capacity { .. } => true,
            Error::Pipeline { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
