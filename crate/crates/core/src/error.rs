use thiserror::Error;

/// Errors raised by the discrete operators, kernels and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("kernel singularity at the source point")]
    Singularity,

    #[error("division by zero frequency: {0}")]
    ZeroFrequency(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("constraint violated: {0} (defect {1:.3e})")]
    Constraint(String, f64),

    #[error("frequency {omega} lies within {distance:.3e} of the spectrum")]
    NearSingular { omega: String, distance: f64 },

    #[error("Neumann series diverges: |omega| = {omega_abs:.6e} >= sigma_min = {sigma_min:.6e}; the expansion holds only for small |omega| > 0")]
    Divergence { omega_abs: f64, sigma_min: f64 },

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("dense factorization failed: {0}")]
    Factorization(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
