use thiserror::Error;

use crate::world::CellId;

/// Errors surfaced by the simulator's public API.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cell {0} is outside the grid")]
    UnknownCell(CellId),

    #[error("cell {0} lies in a blocked region")]
    BlockedCell(CellId),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("car {car} is not assigned to task {task}")]
    NotAssigned { car: usize, task: usize },

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
