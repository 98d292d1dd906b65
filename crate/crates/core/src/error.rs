use std::path::PathBuf;

use crate::survey::Stage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("dataset is empty{}", context_suffix(.0))]
    EmptyDataset(String),

    #[error("stage {found:?} cannot feed {operation} (expected at most {expected:?})")]
    StageOrder {
        operation: &'static str,
        found: Stage,
        expected: Stage,
    },

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cannot load tree: {0}")]
    TreeFormat(String),

    #[error("region is empty after erosion")]
    EmptyRegion,

    #[error("image error: {0}")]
    Image(String),

    #[error("invalid query: {0}")]
    Query(String),

    #[error("prediction and truth identities do not match; orphans: {}", .0.join(", "))]
    Orphans(Vec<String>),

    #[error("{0}")]
    Other(String),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Param(message.into())
    }
}

impl From<image::ImageError> for Error {
    fn from(err: image::ImageError) -> Self {
        Error::Image(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Other(format!("json: {err}"))
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        Error::Parse {
            line,
            message: err.to_string(),
        }
    }
}
