//! Backward-in-tau solve of the adjoint equation.
//!
//! In reversed time s = T - tau the adjoint of the pricing equation reads
//!
//!   phi_s = (nu/2) phi_xx + (sigma^2 nu / 2) phi_nunu
//!           + (q - r + nu/2 + sigma rho) phi_x
//!           + (sigma^2 - kappa (mu - nu)) phi_nu
//!           + sigma nu rho phi_xnu + (kappa - r) phi + (V - V_d),
//!
//! with phi(T) = 0 and homogeneous Dirichlet data on the x-boundaries. It
//! is discretized with the pricing solver's stencil family and stepped
//! with the same mCS scheme; the residual source enters the explicit Y_0
//! stage as the average of its two bracketing time levels.
//!
//! Two choices keep the march stable and the gradient pairing consistent
//! with the forward discretization:
//!
//! - The nu-drift is split: the transport part -kappa (mu - nu) phi_nu is
//!   upwinded on its own sign (it is the transpose of the upwinded forward
//!   drift), while the sigma^2 phi_nu part, which stems from the diffusion
//!   divergence, stays central.
//! - On nu = 0 the adjoint takes homogeneous Dirichlet data. The forward
//!   nu = 0 row is an outflow-type reduced equation that needs no data, so
//!   its dual carries zero inflow data; equivalently, the adjoint behaves
//!   like a Fokker-Planck density, which vanishes at nu = 0 under the
//!   Feller condition. A one-sided march of the formal nu = 0 adjoint row
//!   is exponentially unstable under refinement.
//!
//! The nu_max row keeps its own first-order equation, but it is decoupled
//! from the interior and unforced, so it stays identically zero.

use crate::error::{Error, Result};
use crate::forward::{march, Trajectory, THETA_MCS};
use crate::grid::Grid;
use crate::market::{HestonParams, MarketSpec};
use crate::operators::{assemble_from_rows, DirichletData, RowCoefficients, SplitOperators};

/// Pointwise difference (V - V_d) of two trajectories on the same mesh.
pub fn residual_trajectory(v: &Trajectory, data: &Trajectory) -> Result<Trajectory> {
    v.sub(data)
}

/// Discretizes the adjoint operator (in reversed time) with the forward
/// solver's stencil family.
pub fn assemble_adjoint_operators(
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
) -> Result<SplitOperators> {
    params.validate_for_solve()?;
    let (r, q) = (market.rate, market.dividend);
    let (sigma, rho, kappa, mu) = (params.sigma_nu, params.rho, params.kappa_nu, params.mu_nu);
    let n_nu = grid.n_nu;

    let ops = assemble_from_rows(
        grid,
        // nu = 0 row: homogeneous Dirichlet, kept as a zero row; the march
        // preserves its zero initial data exactly.
        0.0,
        |j, nu| {
            if j == 0 {
                RowCoefficients { x: (0.0, 0.0, 0.0), nu: (0.0, 0.0), nu_central: 0.0, mixed: 0.0 }
            } else if j == n_nu {
                // nu_max row: phi_s = (q - r + nu/2) phi_x - (nu/2) phi_xx.
                RowCoefficients {
                    x: (-0.5 * nu, q - r + 0.5 * nu, 0.0),
                    nu: (0.0, 0.0),
                    nu_central: 0.0,
                    mixed: 0.0,
                }
            } else {
                RowCoefficients {
                    x: (0.5 * nu, q - r + 0.5 * nu + sigma * rho, kappa - r),
                    nu: (0.5 * sigma * sigma * nu, -kappa * (mu - nu)),
                    nu_central: sigma * sigma,
                    mixed: sigma * rho * nu,
                }
            }
        },
        DirichletData::Zero,
    );
    Ok(ops)
}

/// Solves the adjoint equation backward from phi(T) = 0 driven by the
/// residual V - V_d. The returned trajectory is indexed by the forward
/// time level k, so trajectory[n_tau] is the (zero) terminal condition.
pub fn solve_adjoint(
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
    residual: &Trajectory,
) -> Result<Trajectory> {
    solve_adjoint_theta(params, market, grid, residual, THETA_MCS)
}

/// As [`solve_adjoint`] with an explicit ADI parameter.
pub fn solve_adjoint_theta(
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
    residual: &Trajectory,
    theta: f64,
) -> Result<Trajectory> {
    if residual.grid != *grid {
        return Err(Error::GridMismatch(
            "residual trajectory does not live on the solve grid".to_string(),
        ));
    }
    let ops = assemble_adjoint_operators(params, market, grid)?;

    // March in reversed time with the residual read backwards.
    let reversed: Vec<_> =
        (0..=grid.n_tau).map(|m| residual.field(grid.n_tau - m).clone()).collect();
    let source = Trajectory::new(*grid, reversed);
    let phi_s = march(&ops, grid.zero_field(), Some(&source), theta, "adjoint solve")?;

    let fields: Vec<_> = (0..=grid.n_tau).map(|k| phi_s.field(grid.n_tau - k).clone()).collect();
    Ok(Trajectory::new(*grid, fields))
}
