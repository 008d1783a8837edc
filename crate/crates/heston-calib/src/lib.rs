//! Calibration of the implicit Heston parameters (sigma_nu, rho, kappa_nu,
//! mu_nu) by PDE-constrained optimization: the log-price pricing equation
//! is solved forward in time with an ADI scheme, its adjoint backward, the
//! cost gradient is assembled from the two trajectories, and a projected
//! gradient descent with Armijo line search updates the parameters.

pub mod adjoint;
pub mod calibrate;
pub mod error;
pub mod forward;
pub mod gradient;
pub mod grid;
pub mod market;
pub mod operators;
pub mod oracle;
pub mod study;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use forward::{
    initial_condition, interpolate_price, mcs_step, solve_forward, Trajectory, THETA_MCS,
};
pub use grid::{build_grid, Field, Grid, TruncationConfig};
pub use market::{HestonParams, MarketSpec};
pub use operators::{assemble_operators, upwind_first_nu, DirichletData, SplitOperators};
