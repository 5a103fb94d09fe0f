use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("unknown {kind} `{id}`")]
    UnknownReference { kind: &'static str, id: String },

    #[error("validation failed for {entity}: {reason}")]
    Validation { entity: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("salience column {index} (response token) has no nonzero entry")]
    ZeroColumn { index: usize },

    #[error("scorer transport failure: {0}")]
    Transport(String),

    #[error("malformed scorer reply: {0}")]
    MalformedReply(String),
}

impl Error {
    pub(crate) fn validation(entity: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            entity: entity.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the environment (files, network) as opposed to
    /// problems with the data itself.
    pub fn is_environmental(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Transport(_))
    }
}
