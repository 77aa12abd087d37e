use thiserror::Error;

/// Errors raised by the numerical library and the experiment driver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    Numerics(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("operation not defined for this noise variant: {0}")]
    Variant(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unstable step: {0}")]
    Stability(String),
    #[error("path diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("coupling schedule: {0}")]
    Schedule(String),
    #[error("estimator: {0}")]
    Estimator(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "ShapeError",
            Error::Numerics(_) => "NumericsError",
            Error::Domain(_) => "DomainError",
            Error::Variant(_) => "VariantError",
            Error::Validation(_) => "ValidationError",
            Error::Stability(_) => "StabilityError",
            Error::Divergence { .. } => "DivergenceError",
            Error::Schedule(_) => "ScheduleError",
            Error::Estimator(_) => "EstimatorError",
            Error::Config { .. } => "ConfigError",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
