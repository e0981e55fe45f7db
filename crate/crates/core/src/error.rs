//! Error type shared by all modules of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The design matrix does not have full column rank at the working
    /// tolerance (1e-10 relative to the largest singular value).
    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    /// A compound-symmetry kernel that is not positive definite.
    #[error("covariance kernel is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A confounder covariance matrix without a usable factor (negative
    /// eigenvalue beyond tolerance, asymmetry, wrong shape).
    #[error("invalid covariance matrix: {0}")]
    InvalidCovariance(String),

    /// Within-cluster operations require more than one unit per cluster.
    #[error("degenerate within-cluster transform: cluster size is 1")]
    DegenerateWithin,

    /// A bias-formula denominator underflowed.
    #[error("bias formula denominator is zero or underflowed: {0}")]
    ZeroDenominator(String),

    /// A scenario-grid axis name that does not map to a numeric field.
    #[error("unknown scenario axis `{0}`")]
    UnknownAxis(String),

    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid covariate policy: {0}")]
    InvalidPolicy(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
