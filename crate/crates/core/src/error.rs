use std::path::PathBuf;

/// Errors produced by the segmentation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("{what} {value} out of range (must be < {bound})")]
    Range {
        what: &'static str,
        value: usize,
        bound: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{path}: sequence '{id}' has {labels} label frames but {features} feature frames")]
    FrameCountMismatch {
        path: PathBuf,
        id: String,
        labels: usize,
        features: usize,
    },

    #[error("{path}:{location}: {message}")]
    Parse {
        path: PathBuf,
        /// `line N` for text formats, `offset N` for binary ones.
        location: String,
        message: String,
    },

    #[error("training diverged at epoch {epoch}: mean loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse_line(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            location: format!("line {line}"),
            message: message.into(),
        }
    }

    pub(crate) fn parse_offset(path: &std::path::Path, offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            location: format!("offset {offset}"),
            message: message.into(),
        }
    }
}
