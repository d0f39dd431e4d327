use std::path::PathBuf;

use ccstat_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad arguments or an invalid problem.
    pub const USAGE: i32 = 1;
    pub const INFEASIBLE: i32 = 2;
    /// Too few samples for the requested method.
    pub const GATE: i32 = 3;
    pub const IO: i32 = 4;
    /// The solver stopped at its iteration cap; artifacts hold the best iterate.
    pub const ITER_LIMIT: i32 = 5;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) => match e {
                CoreError::InsufficientSamples { .. }
                | CoreError::DegenerateSamples
                | CoreError::InfeasibleTarget { .. } => exit::GATE,
                CoreError::RowInfeasible { .. } => exit::INFEASIBLE,
                _ => exit::USAGE,
            },
            Error::Io { .. } | Error::Json { .. } | Error::Csv { .. } | Error::Format { .. } => exit::IO,
            Error::Usage(_) => exit::USAGE,
        }
    }

    /// What the user can do about it, when there is something obvious.
    pub fn hint(&self) -> Option<String> {
        match self {
            Error::Core(CoreError::InsufficientSamples { need, .. }) => {
                Some(format!("rerun with --samples {need} or more"))
            }
            Error::Core(CoreError::InfeasibleTarget { .. }) => Some(
                "the risk budget per row is below what this many samples can certify; add samples or raise alpha"
                    .into(),
            ),
            Error::Core(CoreError::DegenerateSamples) => {
                Some("the sample set has no spread; check the disturbance model".into())
            }
            Error::Core(CoreError::RowInfeasible { .. }) => {
                Some("loosen that target row or widen the input box".into())
            }
            _ => None,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
