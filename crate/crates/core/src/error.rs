use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is singular: smallest eigenvalue {min_eigenvalue:e} <= {tolerance:e}")]
    Singular { min_eigenvalue: f64, tolerance: f64 },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("incompatible responses: {0}")]
    IncompatibleResponse(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid slicing: {0}")]
    InvalidSlicing(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    NumericalFailure { iteration: usize, message: String },

    #[error("kkt check requires the solver's decomposition blocks")]
    RequiresSolverState,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("degenerate directions: {0}")]
    DegenerateDirections(String),

    #[error("pair ({i}, {j}): {source}")]
    AtPair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("replicate {replicate}: {source}")]
    AtReplicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. }
            | Error::Decomposition(_)
            | Error::NumericalFailure { .. }
            | Error::DegenerateFit(_)
            | Error::DegenerateDirections(_) => true,
            Error::AtPair { source, .. } | Error::AtReplicate { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }
}
