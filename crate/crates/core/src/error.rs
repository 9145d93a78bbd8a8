use std::path::PathBuf;

/// Errors produced by the analysis library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    /// Input data violates a structural rule (duplicate ids, unknown labels, bad cells).
    #[error("{0}")]
    Validation(String),

    /// An argument is outside the range an operation accepts.
    #[error("{0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad configuration or input data rather than by
    /// a computation failing part way through.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::InvalidArgument(_) => true,
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) => true,
            Error::Numerical(_) => false,
            Error::Stage { .. } => false,
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}

macro_rules! validation {
    ($($arg:tt)*) => {
        $crate::error::Error::Validation(format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use validation;
