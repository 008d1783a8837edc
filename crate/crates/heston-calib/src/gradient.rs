//! Assembly of the reduced-cost gradient with respect to
//! u = (sigma_nu, rho, kappa_nu, mu_nu) from the stored state and adjoint
//! trajectories.
//!
//! Each constraint derivative pairs the parameter derivative of the
//! pricing operator, applied to the state, against the adjoint:
//!
//!   d_sigma <e, psi> = -int int [ sigma nu V_nunu + nu rho V_xnu ] phi
//!   d_rho   <e, psi> = -int int [ sigma nu V_xnu ] phi
//!   d_kappa <e, psi> = -int int [ (mu - nu) V_nu ] phi
//!   d_mu    <e, psi> = -int int [ kappa V_nu ] phi
//!
//! over the space-time domain, with trapezoidal quadrature and the same
//! second-order central / one-sided stencils as the solvers. The boundary
//! integrals of the divergence-form derivation drop out: the adjoint
//! carries homogeneous data on the x-boundaries and on nu = 0, and the
//! nu_max row of both solves is parameter-free, so every boundary
//! integrand vanishes identically. The Lagrangian sign convention is
//! L = J - <e, psi>, so the reduced gradient is
//! lambda (u - u_ref) - d_u<e, psi>.

use crate::error::{Error, Result};
use crate::forward::Trajectory;
use crate::grid::{Field, Grid};
use crate::market::{HestonParams, MarketSpec};

/// Gradient components in the fixed order (sigma_nu, rho, kappa_nu, mu_nu).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient4 {
    pub g_sigma: f64,
    pub g_rho: f64,
    pub g_kappa: f64,
    pub g_mu: f64,
}

impl Gradient4 {
    pub fn as_array(&self) -> [f64; 4] {
        [self.g_sigma, self.g_rho, self.g_kappa, self.g_mu]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { g_sigma: a[0], g_rho: a[1], g_kappa: a[2], g_mu: a[3] }
    }

    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// d/dnu with central interior stencils and second-order one-sided edges.
fn d_dnu(f: &Field, grid: &Grid) -> Field {
    let (ni, nj) = grid.field_shape();
    let h = 2.0 * grid.dnu;
    let mut out = Field::zeros((ni, nj));
    for i in 0..ni {
        out[[i, 0]] = (-3.0 * f[[i, 0]] + 4.0 * f[[i, 1]] - f[[i, 2]]) / h;
        for j in 1..nj - 1 {
            out[[i, j]] = (f[[i, j + 1]] - f[[i, j - 1]]) / h;
        }
        out[[i, nj - 1]] = (3.0 * f[[i, nj - 1]] - 4.0 * f[[i, nj - 2]] + f[[i, nj - 3]]) / h;
    }
    out
}

/// The four constraint-derivative integrals d_u<e, psi>, time-integrated
/// with trapezoidal weights.
pub fn constraint_derivatives(
    v: &Trajectory,
    phi: &Trajectory,
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
) -> Result<[f64; 4]> {
    let _ = market;
    if v.grid != *grid || phi.grid != *grid {
        return Err(Error::GridMismatch(
            "state/adjoint trajectories do not match the grid".to_string(),
        ));
    }
    let (sigma, rho, kappa, mu) = (params.sigma_nu, params.rho, params.kappa_nu, params.mu_nu);
    let (ni, nj) = grid.field_shape();

    let mut total = [0.0; 4];
    for k in 0..=grid.n_tau {
        let wk = Grid::trapezoid_weight(k, grid.n_tau) * grid.dtau;
        let vf = v.field(k);
        let pf = phi.field(k);
        let vn = d_dnu(vf, grid);
        for i in 1..ni - 1 {
            let wi = wk * Grid::trapezoid_weight(i, grid.n_x) * grid.dx;
            for j in 0..nj {
                let pp = pf[[i, j]];
                if pp == 0.0 {
                    continue;
                }
                let w = wi * Grid::trapezoid_weight(j, grid.n_nu) * grid.dnu;
                let nu = grid.nu(j);
                // Second derivatives exist only on interior nu-rows; the
                // nu = 0 and nu_max rows carry no sigma or rho terms.
                let (vnunu, vxnu) = if j >= 1 && j < nj - 1 {
                    (
                        (vf[[i, j + 1]] - 2.0 * vf[[i, j]] + vf[[i, j - 1]])
                            / (grid.dnu * grid.dnu),
                        (vf[[i + 1, j + 1]] - vf[[i + 1, j - 1]] - vf[[i - 1, j + 1]]
                            + vf[[i - 1, j - 1]])
                            / (4.0 * grid.dx * grid.dnu),
                    )
                } else {
                    (0.0, 0.0)
                };
                let dvn = vn[[i, j]];
                total[0] -= w * (sigma * nu * vnunu + nu * rho * vxnu) * pp;
                total[1] -= w * (sigma * nu * vxnu) * pp;
                total[2] -= w * ((mu - nu) * dvn) * pp;
                total[3] -= w * (kappa * dvn) * pp;
            }
        }
    }
    Ok(total)
}

/// d_sigma <e, psi>: vol-of-variance component of the constraint derivative.
pub fn gradient_sigma(
    v: &Trajectory,
    phi: &Trajectory,
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
) -> Result<f64> {
    Ok(constraint_derivatives(v, phi, params, market, grid)?[0])
}

/// d_rho <e, psi>: correlation component.
pub fn gradient_rho(
    v: &Trajectory,
    phi: &Trajectory,
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
) -> Result<f64> {
    Ok(constraint_derivatives(v, phi, params, market, grid)?[1])
}

/// d_kappa <e, psi>: mean-reversion component.
pub fn gradient_kappa(
    v: &Trajectory,
    phi: &Trajectory,
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
) -> Result<f64> {
    Ok(constraint_derivatives(v, phi, params, market, grid)?[2])
}

/// d_mu <e, psi>: long-term variance component.
pub fn gradient_mu(
    v: &Trajectory,
    phi: &Trajectory,
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
) -> Result<f64> {
    Ok(constraint_derivatives(v, phi, params, market, grid)?[3])
}

/// Full reduced gradient lambda (u - u_ref) - d_u<e, psi>.
pub fn assemble_gradient(
    v: &Trajectory,
    phi: &Trajectory,
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
    lambda: f64,
    u_ref: Option<&HestonParams>,
) -> Result<Gradient4> {
    let d = constraint_derivatives(v, phi, params, market, grid)?;
    let mut g = [0.0; 4];
    if lambda != 0.0 {
        let u_ref = u_ref.ok_or_else(|| {
            Error::InvalidConfig("lambda > 0 requires reference parameters".to_string())
        })?;
        let u = params.as_array();
        let ur = u_ref.as_array();
        for c in 0..4 {
            g[c] = lambda * (u[c] - ur[c]);
        }
    }
    for c in 0..4 {
        g[c] -= d[c];
    }
    Ok(Gradient4::from_array(g))
}
