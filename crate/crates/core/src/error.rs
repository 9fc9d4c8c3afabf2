use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is rank deficient (smallest/largest singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("first subspace has dimension {first} > second subspace dimension {second}")]
    DimOrderViolation { first: usize, second: usize },

    #[error("feature extractor rows are not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("subspace already fills the ambient space")]
    FullAmbient,

    #[error("vector already lies in the subspace (relative residual {residual:.3e})")]
    AlreadyContained { residual: f64 },

    #[error("could not bracket target extractor distance {target}")]
    TargetUnreachable { target: f64 },

    #[error("second moment is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension constraint violated: {0}")]
    DimConstraintViolated(String),

    #[error("linear-probe normal equations are singular (conditioning {ratio:.3e})")]
    SingularNormalEquations { ratio: f64 },

    #[error("numerical blowup at t = {t}")]
    NumericalBlowup { t: f64 },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
