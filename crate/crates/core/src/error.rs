use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("lexicon construction failed: {0}")]
    LexiconConstruction(String),

    #[error("checkpoint ({context}) has stage `{found}`, expected `{expected}`")]
    StageTag {
        context: String,
        found: String,
        expected: String,
    },

    #[error("utterance `{utterance}` is missing {modality} features at {path}")]
    MissingModality {
        utterance: String,
        modality: String,
        path: PathBuf,
    },

    #[error("unknown split `{0}` (expected train, val or test)")]
    UnknownSplit(String),

    #[error("refusing to overwrite existing artifact at {0} (pass --force to replace)")]
    WouldOverwrite(PathBuf),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
