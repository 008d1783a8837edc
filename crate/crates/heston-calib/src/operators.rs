//! Split finite-difference operators F0, Fx, Fnu on the tensor grid.
//!
//! The spatial operator of the pricing equation
//!
//!   V_tau = (nu/2) V_xx + (sigma^2 nu / 2) V_nunu + (r - q - nu/2) V_x
//!           + kappa (mu - nu) V_nu + sigma nu rho V_xnu - r V
//!
//! is split direction-wise: F0 carries exactly the mixed derivative, Fx all
//! x-derivatives plus the full -rV term, Fnu all nu-derivatives. Interior
//! stencils are second-order central; the first nu-derivative is upwinded
//! because its coefficient kappa (mu - nu) changes sign across the domain.
//!
//! Boundary rows:
//! - x = x_min and x = x_max are Dirichlet (owned by Fx; enforced by row
//!   replacement in the stage solves plus re-imposition after each step),
//! - nu = 0 evolves by its own reduced equation; the kappa*mu d/dnu term
//!   uses a second-order one-sided forward stencil (owned by Fnu, and the
//!   source of the single off-tridiagonal entry in the nu-line systems),
//! - nu = nu_max drops all nu-derivatives (x-part owned by Fx).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::market::{HestonParams, MarketSpec};

/// First-derivative stencil weights (w_{j-1}, w_j, w_{j+1}) approximating
/// `a * d/dnu` with the one-sided difference opposing the drift sign:
/// forward for a > 0, backward for a < 0, zero for a = 0.
pub fn upwind_first_nu(a: f64, dnu: f64) -> (f64, f64, f64) {
    debug_assert!(dnu > 0.0);
    if a > 0.0 {
        (0.0, -a / dnu, a / dnu)
    } else if a < 0.0 {
        (-a / dnu, a / dnu, 0.0)
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// Second-order one-sided forward stencil weights for `coef * d/dnu` at the
/// first node of a line: coef * (-3 u_0 + 4 u_1 - u_2) / (2 dnu).
pub fn one_sided_first_forward(coef: f64, dnu: f64) -> (f64, f64, f64) {
    let s = coef / (2.0 * dnu);
    (-3.0 * s, 4.0 * s, -s)
}

/// Dirichlet data on the two x-boundaries, as a function of tau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirichletData {
    /// Put problem: V(x_min) = K exp(-r tau), V(x_max) = 0.
    DiscountedStrike { strike: f64, rate: f64 },
    /// Homogeneous boundaries (adjoint and linearized problems).
    Zero,
}

impl DirichletData {
    pub fn low(&self, tau: f64) -> f64 {
        match self {
            DirichletData::DiscountedStrike { strike, rate } => strike * (-rate * tau).exp(),
            DirichletData::Zero => 0.0,
        }
    }

    pub fn high(&self, _tau: f64) -> f64 {
        0.0
    }
}

/// Assembled split operators for one parameter set on one grid.
///
/// Coefficients are constant along x for fixed j, so each direction stores
/// one (lower, diag, upper) triple per nu-level. Rows at i = 0 and i = n_x
/// are zero in all three operators (Dirichlet); row j = n_nu is zero in
/// Fnu and F0.
#[derive(Debug, Clone)]
pub struct SplitOperators {
    pub grid: Grid,
    // Fx: per-j interior triple along an x-line.
    fx_lo: Vec<f64>,
    fx_di: Vec<f64>,
    fx_up: Vec<f64>,
    // Fnu: per-j row triple along a nu-line, shared by all interior i.
    fnu_lo: Vec<f64>,
    fnu_di: Vec<f64>,
    fnu_up: Vec<f64>,
    /// Extra coefficient of the one-sided nu = 0 row at column j = 2.
    fnu_spur: f64,
    // F0: per-j coefficient of the 4-point cross stencil.
    f0_coef: Vec<f64>,
    /// Affine boundary forcing owned by the Dirichlet rows of Fx.
    pub dirichlet: DirichletData,
}

impl SplitOperators {
    /// Replaces the Dirichlet boundary data (used by linearized solves and
    /// homogeneity tests).
    pub fn with_dirichlet(mut self, dirichlet: DirichletData) -> Self {
        self.dirichlet = dirichlet;
        self
    }

    pub fn apply_fx(&self, v: &Field) -> Field {
        let (ni, nj) = self.grid.field_shape();
        let mut out = Array2::zeros((ni, nj));
        let vs = v.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("standard layout");
        for i in 1..ni - 1 {
            let b = i * nj;
            for j in 0..nj {
                os[b + j] = self.fx_lo[j] * vs[b - nj + j]
                    + self.fx_di[j] * vs[b + j]
                    + self.fx_up[j] * vs[b + nj + j];
            }
        }
        out
    }

    pub fn apply_fnu(&self, v: &Field) -> Field {
        let (ni, nj) = self.grid.field_shape();
        let mut out = Array2::zeros((ni, nj));
        let vs = v.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("standard layout");
        for i in 1..ni - 1 {
            let b = i * nj;
            os[b] = self.fnu_di[0] * vs[b] + self.fnu_up[0] * vs[b + 1] + self.fnu_spur * vs[b + 2];
            for j in 1..nj - 1 {
                os[b + j] = self.fnu_lo[j] * vs[b + j - 1]
                    + self.fnu_di[j] * vs[b + j]
                    + self.fnu_up[j] * vs[b + j + 1];
            }
            // j = n_nu row: all nu-derivatives dropped.
        }
        out
    }

    pub fn apply_f0(&self, v: &Field) -> Field {
        let (ni, nj) = self.grid.field_shape();
        let mut out = Array2::zeros((ni, nj));
        let vs = v.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("standard layout");
        for i in 1..ni - 1 {
            let b = i * nj;
            for j in 1..nj - 1 {
                let c = self.f0_coef[j];
                if c != 0.0 {
                    os[b + j] = c
                        * (vs[b + nj + j + 1] - vs[b + nj + j - 1] - vs[b - nj + j + 1]
                            + vs[b - nj + j - 1]);
                }
            }
        }
        out
    }

    /// (F0 + Fx + Fnu) v in one pass.
    pub fn apply_full(&self, v: &Field) -> Field {
        let (full, _) = self.apply_full_and_f0(v);
        full
    }

    /// One sweep computing both (F0 + Fx + Fnu) v and F0 v.
    pub fn apply_full_and_f0(&self, v: &Field) -> (Field, Field) {
        let (ni, nj) = self.grid.field_shape();
        let mut full = Array2::zeros((ni, nj));
        let mut mixed = Array2::zeros((ni, nj));
        let vs = v.as_slice().expect("standard layout");
        let fs = full.as_slice_mut().expect("standard layout");
        let ms = mixed.as_slice_mut().expect("standard layout");
        for i in 1..ni - 1 {
            let b = i * nj;
            fs[b] = self.fx_lo[0] * vs[b - nj]
                + self.fx_di[0] * vs[b]
                + self.fx_up[0] * vs[b + nj]
                + self.fnu_di[0] * vs[b]
                + self.fnu_up[0] * vs[b + 1]
                + self.fnu_spur * vs[b + 2];
            for j in 1..nj - 1 {
                let mut acc = self.fx_lo[j] * vs[b - nj + j]
                    + self.fx_di[j] * vs[b + j]
                    + self.fx_up[j] * vs[b + nj + j]
                    + self.fnu_lo[j] * vs[b + j - 1]
                    + self.fnu_di[j] * vs[b + j]
                    + self.fnu_up[j] * vs[b + j + 1];
                let c = self.f0_coef[j];
                if c != 0.0 {
                    let m = c
                        * (vs[b + nj + j + 1] - vs[b + nj + j - 1] - vs[b - nj + j + 1]
                            + vs[b - nj + j - 1]);
                    ms[b + j] = m;
                    acc += m;
                }
                fs[b + j] = acc;
            }
            let j = nj - 1;
            fs[b + j] = self.fx_lo[j] * vs[b - nj + j]
                + self.fx_di[j] * vs[b + j]
                + self.fx_up[j] * vs[b + nj + j];
        }
        (full, mixed)
    }

    /// Factors the stage systems (I - theta_dtau Fx) and (I - theta_dtau Fnu)
    /// once; the matrices are constant in time for this equation.
    pub fn stage_solver(&self, theta_dtau: f64) -> StageSolver {
        StageSolver::new(self, theta_dtau)
    }

    /// Solves (I - theta_dtau * Fx) Y = rhs line by line along x, replacing
    /// the Dirichlet rows with the boundary values at time `tau_bc`.
    pub fn solve_x_stage(&self, rhs: &mut Field, theta_dtau: f64, tau_bc: f64) -> Result<()> {
        self.stage_solver(theta_dtau).solve_x(rhs, tau_bc)
    }

    /// Solves (I - theta_dtau * Fnu) Y = rhs along each interior nu-line.
    /// Lines i = 0 and i = n_x are Dirichlet (identity) and left untouched.
    pub fn solve_nu_stage(&self, rhs: &mut Field, theta_dtau: f64) -> Result<()> {
        self.stage_solver(theta_dtau).solve_nu(rhs)
    }
}

/// Cached Thomas factorizations of the two ADI stage systems.
///
/// The x-direction factors are laid out (i, j)-major so the forward and
/// backward sweeps run over whole contiguous rows, solving all x-lines
/// simultaneously. Lines whose factorization hit a vanishing pivot are
/// recorded and only produce an error when asked to solve nonzero data
/// (inert boundary lines of the adjoint stay exactly zero).
pub struct StageSolver {
    ni: usize,
    nj: usize,
    dirichlet: DirichletData,
    // x-stage: lower coefficient per j (interior rows), fused inverse
    // pivots and elimination coefficients per node.
    x_lo: Vec<f64>,
    x_inv_d: Vec<f64>,
    x_cp: Vec<f64>,
    x_poisoned: Vec<usize>,
    // nu-stage: one factored line shared by all interior i.
    nu_lo: Vec<f64>,
    nu_inv_d: Vec<f64>,
    nu_cp: Vec<f64>,
    nu_spur_m: f64,
    nu_poisoned: bool,
}

const PIVOT_TOL: f64 = 1e-12;

impl StageSolver {
    fn new(ops: &SplitOperators, th_dt: f64) -> Self {
        let (ni, nj) = ops.grid.field_shape();

        // x-direction: per-j constant-coefficient interior rows with
        // identity rows at i = 0 and i = ni-1.
        let mut x_lo = vec![0.0; nj];
        let mut x_inv_d = vec![1.0; ni * nj];
        let mut x_cp = vec![0.0; ni * nj];
        let mut x_poisoned = Vec::new();
        for j in 0..nj {
            let l = -th_dt * ops.fx_lo[j];
            let d = 1.0 - th_dt * ops.fx_di[j];
            let u = -th_dt * ops.fx_up[j];
            x_lo[j] = l;
            let mut ok = true;
            // Row 0 is identity: inv_d = 1, cp = 0 (already initialized).
            for i in 1..ni - 1 {
                let denom = d - l * x_cp[(i - 1) * nj + j];
                if denom.abs() < PIVOT_TOL {
                    ok = false;
                    break;
                }
                x_inv_d[i * nj + j] = 1.0 / denom;
                x_cp[i * nj + j] = u / denom;
            }
            // Row ni-1 is identity (lower coefficient 0): inv_d = 1, cp = 0.
            if !ok {
                x_poisoned.push(j);
                for i in 0..ni {
                    x_inv_d[i * nj + j] = 0.0;
                    x_cp[i * nj + j] = 0.0;
                }
            }
        }

        // nu-direction: one line of varying coefficients, identical for all
        // interior i. Row 0 carries the one-sided spur at column 2,
        // eliminated against row 1 up front.
        let mut lo = vec![0.0; nj];
        let mut di = vec![1.0; nj];
        let mut up = vec![0.0; nj];
        di[0] = 1.0 - th_dt * ops.fnu_di[0];
        up[0] = -th_dt * ops.fnu_up[0];
        for j in 1..nj - 1 {
            lo[j] = -th_dt * ops.fnu_lo[j];
            di[j] = 1.0 - th_dt * ops.fnu_di[j];
            up[j] = -th_dt * ops.fnu_up[j];
        }
        let spur = -th_dt * ops.fnu_spur;
        let mut nu_spur_m = 0.0;
        let mut nu_poisoned = false;
        if spur != 0.0 {
            if up[1].abs() < PIVOT_TOL {
                nu_poisoned = true;
            } else {
                nu_spur_m = spur / up[1];
                di[0] -= nu_spur_m * lo[1];
                up[0] -= nu_spur_m * di[1];
            }
        }
        let mut nu_inv_d = vec![0.0; nj];
        let mut nu_cp = vec![0.0; nj];
        if !nu_poisoned {
            if di[0].abs() < PIVOT_TOL {
                nu_poisoned = true;
            } else {
                nu_inv_d[0] = 1.0 / di[0];
                nu_cp[0] = up[0] * nu_inv_d[0];
                for j in 1..nj {
                    let denom = di[j] - lo[j] * nu_cp[j - 1];
                    if denom.abs() < PIVOT_TOL {
                        nu_poisoned = true;
                        break;
                    }
                    nu_inv_d[j] = 1.0 / denom;
                    nu_cp[j] = if j + 1 < nj { up[j] / denom } else { 0.0 };
                }
            }
        }

        StageSolver {
            ni,
            nj,
            dirichlet: ops.dirichlet,
            x_lo,
            x_inv_d,
            x_cp,
            x_poisoned,
            nu_lo: lo,
            nu_inv_d,
            nu_cp,
            nu_spur_m,
            nu_poisoned,
        }
    }

    /// Solves the x-stage in place, pinning the Dirichlet rows to the
    /// boundary data at `tau_bc`. All x-lines advance together row by row.
    pub fn solve_x(&self, rhs: &mut Field, tau_bc: f64) -> Result<()> {
        let (ni, nj) = (self.ni, self.nj);
        let low = self.dirichlet.low(tau_bc);
        let high = self.dirichlet.high(tau_bc);
        let r = rhs.as_slice_mut().expect("standard layout");

        if !self.x_poisoned.is_empty() {
            for &j in &self.x_poisoned {
                let nonzero = (1..ni - 1).any(|i| r[i * nj + j] != 0.0)
                    || low != 0.0
                    || high != 0.0;
                if nonzero {
                    return Err(Error::SingularStage { context: "x-stage", line: j });
                }
            }
        }

        for j in 0..nj {
            r[j] = low;
            r[(ni - 1) * nj + j] = high;
        }
        // Forward sweep over whole rows.
        for i in 1..ni - 1 {
            let b = i * nj;
            for j in 0..nj {
                r[b + j] = (r[b + j] - self.x_lo[j] * r[b - nj + j]) * self.x_inv_d[b + j];
            }
        }
        // Back substitution (rows 0 and ni-1 have cp = 0).
        for i in (1..ni - 1).rev() {
            let b = i * nj;
            for j in 0..nj {
                r[b + j] -= self.x_cp[b + j] * r[b + nj + j];
            }
        }
        Ok(())
    }

    /// Solves the nu-stage in place on every interior x-line.
    pub fn solve_nu(&self, rhs: &mut Field) -> Result<()> {
        let (ni, nj) = (self.ni, self.nj);
        let r = rhs.as_slice_mut().expect("standard layout");
        for i in 1..ni - 1 {
            let line = &mut r[i * nj..(i + 1) * nj];
            if self.nu_poisoned {
                if line.iter().any(|&x| x != 0.0) {
                    return Err(Error::SingularStage { context: "nu-stage", line: i });
                }
                continue;
            }
            line[0] -= self.nu_spur_m * line[1];
            line[0] *= self.nu_inv_d[0];
            for j in 1..nj {
                line[j] = (line[j] - self.nu_lo[j] * line[j - 1]) * self.nu_inv_d[j];
            }
            for j in (0..nj - 1).rev() {
                line[j] -= self.nu_cp[j] * line[j + 1];
            }
        }
        Ok(())
    }
}

/// Assembles the split operators of the pricing equation for one parameter
/// set. Fails when the parameters are outside the solvable region.
pub fn assemble_operators(
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
) -> Result<SplitOperators> {
    params.validate_for_solve()?;
    let (r, q) = (market.rate, market.dividend);
    let (sigma, rho, kappa, mu) = (params.sigma_nu, params.rho, params.kappa_nu, params.mu_nu);
    let nj = grid.n_nu + 1;

    let mut ops = SplitOperators {
        grid: *grid,
        fx_lo: vec![0.0; nj],
        fx_di: vec![0.0; nj],
        fx_up: vec![0.0; nj],
        fnu_lo: vec![0.0; nj],
        fnu_di: vec![0.0; nj],
        fnu_up: vec![0.0; nj],
        fnu_spur: 0.0,
        f0_coef: vec![0.0; nj],
        dirichlet: DirichletData::DiscountedStrike { strike: market.strike, rate: r },
    };

    for j in 0..nj {
        let nu = grid.nu(j);
        // The x-part has the same shape on every row: the nu = 0 reduced
        // equation and the nu_max asymptotic row coincide with the interior
        // formula evaluated at their nu value.
        let cxx = 0.5 * nu / (grid.dx * grid.dx);
        let cx = (r - q - 0.5 * nu) / (2.0 * grid.dx);
        ops.fx_lo[j] = cxx - cx;
        ops.fx_di[j] = -2.0 * cxx - r;
        ops.fx_up[j] = cxx + cx;

        if j == 0 {
            // Reduced row at nu = 0: kappa*mu d/dnu, one-sided into the domain.
            let (w0, w1, w2) = one_sided_first_forward(kappa * mu, grid.dnu);
            ops.fnu_di[0] = w0;
            ops.fnu_up[0] = w1;
            ops.fnu_spur = w2;
        } else if j < nj - 1 {
            let cnn = 0.5 * sigma * sigma * nu / (grid.dnu * grid.dnu);
            let (wm, wd, wp) = upwind_first_nu(kappa * (mu - nu), grid.dnu);
            ops.fnu_lo[j] = cnn + wm;
            ops.fnu_di[j] = -2.0 * cnn + wd;
            ops.fnu_up[j] = cnn + wp;
            ops.f0_coef[j] = sigma * rho * nu / (4.0 * grid.dx * grid.dnu);
        }
        // j = n_nu: Fnu and F0 rows stay zero.
    }
    Ok(ops)
}

/// Assembles split operators from raw per-row coefficient closures; shared
/// by the adjoint assembly which discretizes a different equation with the
/// same stencil family.
pub(crate) struct RowCoefficients {
    /// (c_xx, c_x, c_0): second, first and zeroth order x-coefficients.
    pub x: (f64, f64, f64),
    /// (c_nunu, a): second-order nu-coefficient and upwinded drift, interior rows.
    pub nu: (f64, f64),
    /// Additional first-order nu-coefficient discretized centrally.
    pub nu_central: f64,
    /// Mixed-derivative coefficient.
    pub mixed: f64,
}

pub(crate) fn assemble_from_rows(
    grid: &Grid,
    boundary_nu0_drift: f64,
    row: impl Fn(usize, f64) -> RowCoefficients,
    dirichlet: DirichletData,
) -> SplitOperators {
    let nj = grid.n_nu + 1;
    let mut ops = SplitOperators {
        grid: *grid,
        fx_lo: vec![0.0; nj],
        fx_di: vec![0.0; nj],
        fx_up: vec![0.0; nj],
        fnu_lo: vec![0.0; nj],
        fnu_di: vec![0.0; nj],
        fnu_up: vec![0.0; nj],
        fnu_spur: 0.0,
        f0_coef: vec![0.0; nj],
        dirichlet,
    };
    for j in 0..nj {
        let nu = grid.nu(j);
        let c = row(j, nu);
        let cxx = c.x.0 / (grid.dx * grid.dx);
        let cx = c.x.1 / (2.0 * grid.dx);
        ops.fx_lo[j] = cxx - cx;
        ops.fx_di[j] = -2.0 * cxx + c.x.2;
        ops.fx_up[j] = cxx + cx;
        if j == 0 {
            let (w0, w1, w2) = one_sided_first_forward(boundary_nu0_drift, grid.dnu);
            ops.fnu_di[0] = w0;
            ops.fnu_up[0] = w1;
            ops.fnu_spur = w2;
        } else if j < nj - 1 {
            let cnn = c.nu.0 / (grid.dnu * grid.dnu);
            let (wm, wd, wp) = upwind_first_nu(c.nu.1, grid.dnu);
            let cc = c.nu_central / (2.0 * grid.dnu);
            ops.fnu_lo[j] = cnn + wm - cc;
            ops.fnu_di[j] = -2.0 * cnn + wd;
            ops.fnu_up[j] = cnn + wp + cc;
            ops.f0_coef[j] = c.mixed / (4.0 * grid.dx * grid.dnu);
        }
    }
    ops
}
