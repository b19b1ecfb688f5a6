use thiserror::Error;

/// Failure of a CLI run; each variant maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(mkpca_core::Error),

    #[error("{0}")]
    NotNegativeType(mkpca_core::Error),

    #[error("{failed} of {total} properties failed")]
    CheckFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::CheckFailed { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::NotNegativeType(_) => 4,
        }
    }
}

impl From<mkpca_core::Error> for CliError {
    fn from(e: mkpca_core::Error) -> Self {
        match e {
            mkpca_core::Error::NotNegativeType { .. } => CliError::NotNegativeType(e),
            other => CliError::Data(other),
        }
    }
}
