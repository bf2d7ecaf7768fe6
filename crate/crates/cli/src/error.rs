use erlang_edm::EdmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] EdmError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(e) => match e {
                EdmError::NegativeStayRate { .. } => 3,
                EdmError::StepFailure { .. } | EdmError::NumericalFailure(_) | EdmError::NonFinitePayoff { .. } => 4,
                EdmError::NonContractive { .. } => 5,
                _ => 2,
            },
            CliError::Io { .. } => 1,
        }
    }
}
