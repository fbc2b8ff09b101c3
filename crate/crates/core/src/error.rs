use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {tau} lies outside the domain [{a}, {b}]")]
    Domain { tau: f64, a: f64, b: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("kernels are linearly dependent: smallest Gram eigenvalue {min_eig:e} <= tolerance {tol:e}")]
    LinearDependence { min_eig: f64, tol: f64 },

    #[error("quadrature did not converge at {panels} panels (last {last:e}, previous {previous:e})")]
    Accuracy {
        panels: usize,
        last: f64,
        previous: f64,
    },

    #[error("inadmissible certificate: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
