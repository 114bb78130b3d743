use std::io;
use std::path::Path;

/// Failures of the command-line pipeline, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] cafm_core::Error),

    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("{0}")]
    Data(String),

    #[error("environment: {0}")]
    Environment(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(cafm_core::Error::Config(_)) => 2,
            CliError::Core(cafm_core::Error::Divergence { .. }) => 4,
            CliError::Environment(_) => 5,
            _ => 3,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { context: path.display().to_string(), source }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::io(path, e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}
