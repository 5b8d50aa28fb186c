use thiserror::Error;

/// Errors raised by the scale-space operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("eigenvalues must be positive (got {lambda1}, {lambda2})")]
    NonPositiveEigenvalue { lambda1: f64, lambda2: f64 },

    #[error("covariance ({cxx}, {cxy}, {cyy}) is not positive definite")]
    NotPositiveDefinite { cxx: f64, cxy: f64, cyy: f64 },

    #[error("affine transform is singular (det = {det})")]
    SingularTransform { det: f64 },

    #[error("kernel grid must have odd size, got {width}x{height}")]
    EvenSize { width: usize, height: usize },

    #[error("derivative order ({m}, {n}) unsupported; total order must be at most 2")]
    UnsupportedOrder { m: u32, n: u32 },

    #[error("quadrature did not converge after {levels} refinement levels (last estimates {previous}, {current})")]
    QuadratureNonConvergence {
        levels: u32,
        previous: f64,
        current: f64,
    },

    #[error("Cxxyy = {value} outside the non-negativity interval [{lower}, {upper}]")]
    FeasibilityViolation { value: f64, lower: f64, upper: f64 },

    #[error("low-frequency Cxxyy choice requires Cxy = 0 (got {cxy})")]
    UnsupportedForNonzeroCxy { cxy: f64 },

    #[error("stencil coefficient at (row {row}, col {col}) is negative: {value}")]
    NegativeCoefficient { row: usize, col: usize, value: f64 },

    #[error("scale step rejected: {0}")]
    InvalidStep(String),

    #[error("covariance must be normalized to a maximum eigenvalue of 1 (got {lambda_max})")]
    NotNormalized { lambda_max: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image dimensions {width}x{height} must be even")]
    OddDimensions { width: usize, height: usize },

    #[error("image dimensions {width}x{height} not divisible by {divisor}")]
    DimensionNotDivisible {
        width: usize,
        height: usize,
        divisor: usize,
    },

    #[error("smallest eigenvalue is zero; subsampling gate undefined")]
    DegenerateEccentricity,

    #[error("pyramid state (level {level}, iteration {k}) is not reachable: {reason}")]
    UnreachableTarget { level: u32, k: u32, reason: String },

    #[error("value {value} out of range: {what}")]
    OutOfRange { value: f64, what: &'static str },

    #[error("filter bank has no entries")]
    EmptyBank,

    #[error("discrete derivative kernel has zero norm")]
    ZeroDiscreteNorm,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
