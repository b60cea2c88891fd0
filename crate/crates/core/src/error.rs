use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlamError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible assignment problem: {0}")]
    Infeasible(String),

    #[error("internal consistency violated: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("comparison refused: {0}")]
    ComparisonRefused(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SlamError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SlamError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            SlamError::Config(_)
            | SlamError::InvalidArgument(_)
            | SlamError::Json(_)
            | SlamError::ComparisonRefused(_) => 2,
            SlamError::Io { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, SlamError>;
