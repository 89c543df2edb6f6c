use thiserror::Error;

/// Failures of a CLI run, each mapped to a distinct exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("computation error: {0}")]
    Compute(#[from] classd::Error),

    #[error("output error: {0}")]
    Output(String),

    #[error("{0} tracked comparison(s) exceeded tolerance")]
    Tolerance(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Tolerance(_) => 1,
            CliError::Config(_) => 2,
            CliError::Compute(_) | CliError::Output(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
