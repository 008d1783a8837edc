//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Grid construction rejected (cell counts, truncation bounds, strike placement).
    #[error("invalid grid configuration: {0}")]
    InvalidGrid(String),

    /// Model parameters outside the admissible region for a PDE solve.
    #[error("inadmissible Heston parameters: {0}")]
    InvalidParams(String),

    /// A stage matrix of the ADI scheme could not be factorized.
    #[error("singular stage matrix in {context} (line {line})")]
    SingularStage { context: &'static str, line: usize },

    /// A solve produced NaN or infinite values.
    #[error("non-finite field detected in {context} at time step {step}")]
    NonFinite { context: &'static str, step: usize },

    /// Two trajectories (or a trajectory and a grid) do not live on the same mesh.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Interpolation query outside the truncated domain.
    #[error("query ({x}, {nu}) outside domain")]
    OutOfDomain { x: f64, nu: f64 },

    /// Line search could not find an admissible step above the minimum.
    #[error("line search failed: {0}")]
    LineSearchFailure(String),

    /// A descent direction precondition was violated.
    #[error("not a descent direction: <grad, d> = {0}")]
    NotDescentDirection(f64),

    /// Characteristic-function quadrature did not settle within its budget.
    #[error("oracle quadrature failed to converge (last change {last_change:e})")]
    QuadratureNotConverged { last_change: f64 },

    /// Finite-difference probe point left the parameter box.
    #[error("finite-difference probe outside the parameter box: {0}")]
    ProbeOutsideBox(String),

    /// Invalid experiment or calibration configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Percentage metric undefined.
    #[error("improvement metric undefined: J0 = {0} is not positive")]
    ImprovementUndefined(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
