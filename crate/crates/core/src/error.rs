use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QmfsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("|A t| = {norm:.3} exceeds the exponential bound {bound}")]
    ExponentialBound { norm: f64, bound: f64 },

    #[error("unphysical Gaussian state: min eigenvalue of V + i(hbar/2)Omega is {min_eigenvalue:e}")]
    Unphysical { min_eigenvalue: f64 },

    #[error("step too large: |A| dt = {value:.4} > {limit}")]
    StepTooLarge { value: f64, limit: f64 },

    #[error("Riccati flow did not converge by t = {time} (relative rate {rate:e})")]
    NotConverged {
        time: f64,
        rate: f64,
        last: Box<Array2<f64>>,
    },

    #[error("singular information: {0}")]
    SingularInformation(String),

    #[error("Hilbert-space dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("operator not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("trajectory diverged at t = {time} (norm {norm:e})")]
    Diverged { time: f64, norm: f64 },

    #[error("step-halving error {error:e} exceeds {tolerance:e}")]
    StepSize { error: f64, tolerance: f64 },

    #[error("circuit budget exceeded: {0}")]
    Budget(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("linear algebra failure: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QmfsError>;
