use thiserror::Error;

/// Errors raised by the inference library.
///
/// A log-likelihood of `-inf` is never an error: it is a regular value meaning
/// the proposal is certainly rejected.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular covariance in {0}")]
    SingularCovariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model `{model}` does not support {feature}")]
    Unsupported { model: String, feature: &'static str },

    #[error("non-finite state after inner step {step}")]
    NonFiniteState { step: usize },

    #[error("jump process exceeded {limit} events in one observation interval")]
    EventLimit { limit: usize },

    #[error("could not obtain a finite initial log-likelihood after {attempts} attempts")]
    Initialization { attempts: usize },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid override `{key}` for model `{model}`: {reason}")]
    InvalidOverride {
        model: String,
        key: String,
        reason: String,
    },

    #[error("sobol dimension {requested} exceeds the supported maximum of {max}")]
    SobolDimension { requested: usize, max: usize },

    #[error("{0}")]
    Numerical(String),
}

impl Error {
    /// Whether the error means the simulated state diverged, which filters
    /// report as a zero likelihood rather than a failure.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::NonFiniteState { .. } | Error::EventLimit { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
