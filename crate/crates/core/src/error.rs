use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value breaks its documented invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data has the wrong shape for the component that received it.
    #[error("input error: {0}")]
    Input(String),

    /// Input data is malformed (non-finite samples, mismatched rates, bad labels).
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller broke an ordering or range contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn at_step(step: usize, source: Error) -> Self {
        Error::AtStep {
            step,
            source: Box::new(source),
        }
    }

    /// True for errors that stem from configuration rather than data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::AtStep { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
