use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeisError {
    #[error("dimension mismatch: expected n = {expected}, found n = {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point has a non-finite coordinate")]
    NonFinite,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric positive definite (smallest eigenvalue {min_eig:e})")]
    NotSpd { min_eig: f64 },

    #[error("matrix is not symmetric (asymmetry {asym:e})")]
    NotSymmetric { asym: f64 },

    #[error("eigenvalues [{min:e}, {max:e}] fall outside the declared bounds [{lambda:e}, {big_lambda:e}]")]
    OutOfBounds {
        min: f64,
        max: f64,
        lambda: f64,
        big_lambda: f64,
    },

    #[error("matrix is singular")]
    Singular,

    #[error("evaluation at the pole of a singular kernel")]
    Pole,

    #[error("exact partial derivatives are not available for this field")]
    PartialsUnavailable,

    #[error("no usable samples: {0}")]
    EmptySample(String),

    #[error("quadrature budget of {samples} samples exhausted before tolerance {tol:e} (estimate {value:e} ± {stderr:e})")]
    QuadratureBudget {
        samples: usize,
        tol: f64,
        value: f64,
        stderr: f64,
    },

    #[error("stencil does not fit the domain: {0}")]
    Stencil(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("hypotheses not satisfied: {0}")]
    Hypothesis(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HeisError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HeisError::InvalidParameter(msg.into()))
}
