use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis dimension {dim} exceeds the configured limit of {limit} states")]
    DimensionLimit { dim: u128, limit: usize },
    #[error("site index {site} out of range for {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operator does not conserve the particle number of the basis")]
    NotNumberConserving,
    #[error("occupation pattern {0:?} is not a state of the basis")]
    StateNotInBasis(Vec<u16>),
    #[error("matrix of side {n} exceeds the eigensolver limit of {limit}")]
    MatrixTooLarge { n: usize, limit: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("eigensolver did not converge (partial residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("no eigenvalue within {tol:e} of zero (smallest modulus {smallest:e})")]
    NoZeroMode { tol: f64, smallest: f64 },
    #[error("zero eigenvalue is {count}-fold degenerate; steady state is not unique")]
    DegenerateZeroMode { count: usize },
    #[error("eigenmode normalizer vanishes ({0:e}); exceptional point")]
    ExceptionalPoint(f64),
    #[error("eigensystem lacks {0} eigenvectors")]
    MissingVectors(&'static str),
    #[error("all eigenvalues lie within {0:e} of zero")]
    AllZero(f64),
    #[error("non-finite expectation value at site {site}")]
    Blowup { site: usize },
    #[error("trace drift {drift:e} exceeds {limit:e}; reduce the time step")]
    TraceDrift { drift: f64, limit: f64 },
    #[error("mean-field steady state is not uniform (density spread {spread:e})")]
    NonUniform { spread: f64 },
    #[error("steady-state search did not converge (residual {residual:e} at t = {time})")]
    NotConverged { residual: f64, time: f64 },
    #[error("nonpositive gap {0:e} in scaling fit")]
    NonPositiveGap(f64),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("fit did not converge: {0}")]
    FitFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
