//! Crate-wide error type.

/// Errors produced by construction, analysis, and training routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("weight vector entries must be strictly positive")]
    NonPositiveWeight,

    #[error("power iteration did not converge within {max_iter} iterations")]
    NonConvergence { max_iter: usize },

    #[error("no well-posedness certificate: best weighted measure found is {mu} (need < 1)")]
    NoCertificate { mu: f64 },

    #[error(
        "fixed-point iteration exceeded {max_iter} iterations (weighted residual {residual:e})"
    )]
    MaxIterExceeded { max_iter: usize, residual: f64 },

    #[error("invalid input box: lower bound exceeds upper bound at index {index}")]
    InvalidBox { index: usize },

    #[error("spectral radius {rho} >= 1: unbounded-depth propagation requires rho(|W|) < 1")]
    SpectralRadiusTooLarge { rho: f64 },

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndexOutOfRange { index: usize, classes: usize },

    #[error("grid sampling supports dimension <= {max}, got {dim}")]
    GridDimensionTooLarge { dim: usize, max: usize },

    #[error("singular linear system while differentiating through the fixed point")]
    SingularSystem,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
