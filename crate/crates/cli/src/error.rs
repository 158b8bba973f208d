use thiserror::Error;

/// Failures of a CLI run, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("diagnostic failure: {0}")]
    Diagnostic(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Diagnostic(_) => 4,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Solver(m) | CliError::Diagnostic(m) => m.clone(),
            CliError::Io(e) => e.to_string(),
        }
    }

    /// Errors raised while assembling a problem are configuration errors.
    pub fn from_build(e: drgp::Error) -> Self {
        CliError::Config(e.to_string())
    }

    /// Errors raised afterwards: invalid arguments still point at the config,
    /// everything else is a solver failure.
    pub fn from_solve(e: drgp::Error) -> Self {
        match e {
            drgp::Error::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Solver(other.to_string()),
        }
    }
}
