//! Error type shared by every module.

use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum ProbDrError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("neighbour graph is disconnected: {components} connected components")]
    Disconnected { components: usize },

    #[error("isolated nodes in neighbour graph: {0:?}")]
    IsolatedNodes(Vec<usize>),

    #[error("affinity family mismatch: {0}")]
    FamilyMismatch(String),

    #[error("optimisation diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("non-finite objective at parameters {0}")]
    NonFiniteObjective(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl ProbDrError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ProbDrError::Config(_) | ProbDrError::InvalidArgument(_) => ErrorClass::Config,
            ProbDrError::Data(_)
            | ProbDrError::Io(_)
            | ProbDrError::ShapeMismatch { .. }
            | ProbDrError::NonFinite(_)
            | ProbDrError::NotSymmetric { .. }
            | ProbDrError::FamilyMismatch(_) => ErrorClass::Data,
            ProbDrError::Singular(_)
            | ProbDrError::Disconnected { .. }
            | ProbDrError::IsolatedNodes(_)
            | ProbDrError::Diverged { .. }
            | ProbDrError::NonFiniteObjective(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, ProbDrError>;
