use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum PwError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("grid functions live on different meshes")]
    MeshMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero function is not admissible here")]
    ZeroFunction,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error(transparent)]
    Minimizer(Box<crate::nehari::MinimizerFailure>),

    #[error("trajectory too short: {have} states, need at least {need}")]
    TooShort { have: usize, need: usize },

    #[error("trajectory is not a blow-up run")]
    NotBlowUp,

    #[error("trajectory is not a global-decay run")]
    NotDecay,

    #[error("initial datum is not in the required set: {0}")]
    NotInSet(String),

    #[error("initial datum changes sign")]
    SignChanging,

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PwError>;
