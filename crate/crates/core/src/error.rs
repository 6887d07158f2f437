use thiserror::Error;

use crate::spd::SpdMatrix;

/// Errors raised by the geometry, dynamics and bound computations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (smallest eigenvalue {min:e}, largest {max:e})")]
    NotPositiveDefinite { min: f64, max: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("ill-conditioned congruence action (condition number {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("numeric breakdown: {0}")]
    Numeric(String),

    #[error("inductive barycenter did not converge after {cycles} cycles (last step {last_step:e})")]
    NotConverged {
        cycles: usize,
        last_step: f64,
        last: Box<SpdMatrix>,
    },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("orbit escaped at t = {time} (|x| = {norm:e})")]
    Escape { time: f64, norm: f64 },

    #[error(
        "Jacobian is singular at {point:?}; the minimizing-metric construction requires an \
         invertible Jacobian on K"
    )]
    SingularJacobian { point: Vec<f64> },

    #[error("orbital derivative is not symmetric (asymmetry {0:e})")]
    AsymmetricDerivative(f64),

    #[error("{point:?} is not an equilibrium (|f(x)| = {residual:e})")]
    NotEquilibrium { point: Vec<f64>, residual: f64 },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("sample set is empty: {0}")]
    EmptySample(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure stems from bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::UnknownSystem(_)
                | Error::InvalidWeights(_)
                | Error::DimensionMismatch { .. }
                | Error::Unsupported(_)
                | Error::Json(_)
                | Error::EmptySample(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
