use ivy_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    /// A required input file or directory is absent or unreadable.
    #[error("{0}")]
    MissingInput(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// Process exit status: 2 for bad configuration or arguments, 3 for
    /// missing or malformed inputs, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::InvalidInput(_) => 2,
                CoreError::Numerical(_) => 4,
                CoreError::Parse { .. }
                | CoreError::Dimension { .. }
                | CoreError::EmptyDataset
                | CoreError::Format(_)
                | CoreError::Io { .. } => 3,
            },
        }
    }
}
