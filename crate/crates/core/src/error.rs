use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus contains no documents")]
    EmptyCorpus,

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("sample `{0}` has no label")]
    Unlabeled(String),

    #[error("class `{class}` has {available} samples but {needed} are required")]
    InsufficientSamples {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("training input is empty")]
    EmptyInput,

    #[error("loss became non-finite while training layer {layer} at epoch {epoch}")]
    NonFiniteLoss { layer: usize, epoch: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("at least two classes are required, found {0}")]
    SingleClass(usize),

    #[error("length mismatch: {left} predictions vs {right} ground-truth labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("at least 3 points are required, found {0}")]
    TooFewPoints(usize),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {path}; run the `{stage}` stage first")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("artifact {path} does not match the checksum recorded by the `{stage}` stage; rerun it")]
    ChecksumMismatch { stage: String, path: PathBuf },

    #[error("artifacts directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool: 2 for missing or stale
    /// artifacts, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact { .. } | Error::ChecksumMismatch { .. } => 2,
            _ => 1,
        }
    }
}
