use groundcap_core::store::StoreError;
use thiserror::Error;

/// Error categories, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("store error: {0}")]
    Store(#[from] StoreError),
    #[error("captioner error: {0}")]
    External(String),
    #[error("{failed} of {total} items failed")]
    Partial { failed: usize, total: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Store(_) => 4,
            CliError::External(_) => 5,
            CliError::Partial { .. } => 6,
            CliError::Io(_) => 7,
        }
    }
}
