use fractal_forms::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("invariant failure: {0}")]
    Invariant(String),

    #[error("{0}")]
    Core(CoreError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Core(e) => match e {
                CoreError::NotConverged { .. } | CoreError::StepFailed { .. } => 3,
                CoreError::ResourceLimit { .. }
                | CoreError::InvalidSpec(_)
                | CoreError::InvalidWeights(_)
                | CoreError::InvalidMeasure(_)
                | CoreError::InvalidExponent(_)
                | CoreError::Unsupported(_)
                | CoreError::TooManyEigenpairs { .. }
                | CoreError::Incompatible(_)
                | CoreError::EmptyBoundary => 2,
                _ => 1,
            },
            CliError::Io(_) | CliError::Output(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
