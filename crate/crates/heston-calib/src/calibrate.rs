//! Cost functional, parameter projection, Armijo line searches, and the
//! gradient-descent calibration loop.

use serde::{Deserialize, Serialize};

use crate::adjoint::solve_adjoint_theta;
use crate::error::{Error, Result};
use crate::forward::{solve_forward_theta, Trajectory, THETA_MCS};
use crate::gradient::{assemble_gradient, Gradient4};
use crate::grid::Grid;
use crate::market::{HestonParams, MarketSpec};

/// Per-parameter box constraints in the order (sigma_nu, rho, kappa_nu, mu_nu).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            lower: [0.01, -0.999, 0.01, 0.001],
            upper: [2.0, 0.999, 20.0, 1.0],
        }
    }
}

impl ParamBounds {
    pub fn contains(&self, u: &HestonParams) -> bool {
        u.as_array()
            .iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, u: &HestonParams) -> HestonParams {
        let a = u.as_array();
        let mut out = [0.0; 4];
        for c in 0..4 {
            out[c] = a[c].clamp(self.lower[c], self.upper[c]);
        }
        HestonParams::from_array(out)
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..4 {
            if !(self.lower[c] < self.upper[c]) {
                return Err(Error::InvalidConfig(format!(
                    "bounds component {c}: lower {} must be below upper {}",
                    self.lower[c], self.upper[c]
                )));
            }
        }
        if self.lower[1] < -1.0 || self.upper[1] > 1.0 {
            return Err(Error::InvalidConfig("rho bounds must lie within [-1, 1]".to_string()));
        }
        Ok(())
    }
}

/// Configuration of the calibration loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibConfig {
    /// Tikhonov weight; 0 drops the reference-parameter term.
    pub lambda: f64,
    /// Reference parameters of the Tikhonov term (required when lambda > 0).
    pub u_ref: Option<HestonParams>,
    /// Armijo constant in (0, 1).
    pub gamma: f64,
    /// Stopping tolerance on the Euclidean gradient norm.
    pub grad_tol: f64,
    /// Maximum number of accepted descent steps.
    pub max_iters: usize,
    /// Smallest admissible line-search step.
    pub min_step: f64,
    /// Box constraints.
    pub bounds: ParamBounds,
    /// ADI scheme parameter used by all inner PDE solves.
    pub theta: f64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            u_ref: None,
            gamma: 1e-4,
            grad_tol: 1e-2,
            max_iters: 100,
            min_step: (2.0f64).powi(-30),
            bounds: ParamBounds::default(),
            theta: THETA_MCS,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must be in (0,1), got {}", self.gamma)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.lambda > 0.0 && self.u_ref.is_none() {
            return Err(Error::InvalidConfig(
                "lambda > 0 requires reference parameters".to_string(),
            ));
        }
        self.bounds.validate()
    }
}

/// One accepted descent step, logged for post-hoc verification of the
/// projected Armijo inequality.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AcceptedStep {
    pub sigma: f64,
    pub cost_before: f64,
    pub cost_after: f64,
    /// u_next - u, componentwise.
    pub step: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
}

impl std::fmt::Display for TerminationStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TerminationStatus::Converged => "converged",
            TerminationStatus::MaxIters => "max_iters",
            TerminationStatus::LineSearchFailure => "line_search_failure",
        };
        f.write_str(s)
    }
}

/// Outcome of a calibration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: HestonParams,
    /// Cost at every visited iterate, starting with J(u0).
    pub cost_history: Vec<f64>,
    /// Gradient norm at every visited iterate.
    pub grad_norm_history: Vec<f64>,
    /// Accepted steps with the data needed to recheck the Armijo inequality.
    pub steps: Vec<AcceptedStep>,
    /// Number of accepted steps.
    pub iterations: usize,
    pub status: TerminationStatus,
    /// (J0 - J_final) / J0, or 0 when J0 = 0.
    pub improvement: f64,
}

/// The tracking cost J = 1/2 int_0^T ||V - V_d||^2 dt plus the Tikhonov
/// term (lambda/2) ||u - u_ref||^2; trapezoidal in time and space.
pub fn cost(v: &Trajectory, data: &Trajectory, u: &HestonParams, cfg: &CalibConfig) -> Result<f64> {
    if v.grid != data.grid {
        return Err(Error::GridMismatch("cost of trajectories on different meshes".to_string()));
    }
    let grid = &v.grid;
    let mut tracking = 0.0;
    for k in 0..=grid.n_tau {
        let diff = v.field(k) - data.field(k);
        tracking += Grid::trapezoid_weight(k, grid.n_tau) * grid.l2_norm_sq(&diff);
    }
    tracking *= 0.5 * grid.dtau;

    let penalty = if cfg.lambda > 0.0 {
        let u_ref = cfg.u_ref.ok_or_else(|| {
            Error::InvalidConfig("lambda > 0 requires reference parameters".to_string())
        })?;
        let d = u.distance(&u_ref);
        0.5 * cfg.lambda * d * d
    } else {
        0.0
    };
    Ok(tracking + penalty)
}

/// Componentwise clamp to the box followed by the Feller repair: when
/// 2 kappa mu < sigma^2 the vol-of-variance is shrunk to sqrt(2 kappa mu).
pub fn project(u: &HestonParams, cfg: &CalibConfig) -> HestonParams {
    let mut p = cfg.bounds.clamp(u);
    let cap = 2.0 * p.kappa_nu * p.mu_nu;
    if p.sigma_nu * p.sigma_nu > cap {
        let mut s = cap.sqrt();
        // sqrt rounding can leave s*s one ulp above the cap.
        while s * s > cap {
            s = f64::from_bits(s.to_bits() - 1);
        }
        p.sigma_nu = s;
    }
    p
}

/// Armijo backtracking: the largest sigma in {1, 1/2, 1/4, ...} with
/// f(u + sigma d) - f(u) <= gamma sigma <grad, d>. Requires a descent
/// direction; fails when sigma falls below `min_step`.
pub fn armijo_search(
    f: &mut dyn FnMut(&HestonParams) -> Result<f64>,
    u: &HestonParams,
    direction: [f64; 4],
    grad: [f64; 4],
    gamma: f64,
    min_step: f64,
) -> Result<f64> {
    let slope: f64 = grad.iter().zip(direction.iter()).map(|(g, d)| g * d).sum();
    if slope >= 0.0 {
        return Err(Error::NotDescentDirection(slope));
    }
    let f_u = f(u)?;
    let base = u.as_array();
    let mut sigma = 1.0;
    loop {
        let mut trial = [0.0; 4];
        for c in 0..4 {
            trial[c] = base[c] + sigma * direction[c];
        }
        let f_trial = f(&HestonParams::from_array(trial))?;
        if f_trial - f_u <= gamma * sigma * slope {
            return Ok(sigma);
        }
        sigma *= 0.5;
        if sigma < min_step {
            return Err(Error::LineSearchFailure(format!(
                "no admissible Armijo step above {min_step:e}"
            )));
        }
    }
}

/// Projected Armijo backtracking: the largest sigma in {1, 1/2, ...} with
/// f(P(u - sigma g)) - f(u) <= -(gamma / sigma) ||P(u - sigma g) - u||^2.
/// Returns the step and the projected iterate.
pub fn projected_armijo_search(
    f: &mut dyn FnMut(&HestonParams) -> Result<f64>,
    u: &HestonParams,
    grad: &Gradient4,
    gamma: f64,
    cfg: &CalibConfig,
) -> Result<(f64, HestonParams)> {
    let f_u = f(u)?;
    projected_armijo_search_with_cost(f, u, f_u, grad, gamma, cfg).map(|(s, un, _)| (s, un))
}

/// As [`projected_armijo_search`] with f(u) already known; also returns
/// f(u_next) so callers can reuse the accepted evaluation.
pub fn projected_armijo_search_with_cost(
    f: &mut dyn FnMut(&HestonParams) -> Result<f64>,
    u: &HestonParams,
    f_u: f64,
    grad: &Gradient4,
    gamma: f64,
    cfg: &CalibConfig,
) -> Result<(f64, HestonParams, f64)> {
    let base = u.as_array();
    let g = grad.as_array();
    let mut sigma = 1.0;
    loop {
        let mut trial = [0.0; 4];
        for c in 0..4 {
            trial[c] = base[c] - sigma * g[c];
        }
        let projected = project(&HestonParams::from_array(trial), cfg);
        let disp: f64 = projected
            .as_array()
            .iter()
            .zip(base.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let f_trial = f(&projected)?;
        if f_trial - f_u <= -(gamma / sigma) * disp {
            return Ok((sigma, projected, f_trial));
        }
        sigma *= 0.5;
        if sigma < cfg.min_step {
            return Err(Error::LineSearchFailure(format!(
                "no admissible projected Armijo step above {:e}",
                cfg.min_step
            )));
        }
    }
}

/// Gradient-descent calibration: repeatedly solve the state equation, the
/// adjoint equation, assemble the gradient and take a projected Armijo step
/// until the gradient norm falls below the tolerance.
pub fn calibrate(
    u0: &HestonParams,
    data: &Trajectory,
    market: &MarketSpec,
    grid: &Grid,
    cfg: &CalibConfig,
) -> Result<CalibrationResult> {
    cfg.validate()?;
    if data.grid != *grid {
        return Err(Error::GridMismatch(
            "calibration data does not live on the solve grid".to_string(),
        ));
    }

    let mut u = project(u0, cfg);
    let mut cost_history = Vec::new();
    let mut grad_norms = Vec::new();
    let mut steps: Vec<AcceptedStep> = Vec::new();

    // The line search and the next iteration both need the forward solve at
    // the accepted iterate; cache the most recent one.
    let mut cached: Option<(HestonParams, Trajectory, f64)> = None;

    let status = loop {
        let (v, j_curr) = match cached.take() {
            Some((p, v, j)) if p == u => (v, j),
            _ => {
                let v = solve_forward_theta(&u, market, grid, cfg.theta)?;
                let j = cost(&v, data, &u, cfg)?;
                (v, j)
            }
        };
        cost_history.push(j_curr);

        let residual = v.sub(data)?;
        let phi = solve_adjoint_theta(&u, market, grid, &residual, cfg.theta)?;
        let g = assemble_gradient(&v, &phi, &u, market, grid, cfg.lambda, cfg.u_ref.as_ref())?;
        let g_norm = g.norm();
        grad_norms.push(g_norm);

        if g_norm <= cfg.grad_tol {
            break TerminationStatus::Converged;
        }
        if steps.len() >= cfg.max_iters {
            break TerminationStatus::MaxIters;
        }

        let mut trial_cache: Option<(HestonParams, Trajectory)> = None;
        let mut f = |p: &HestonParams| -> Result<f64> {
            let v = solve_forward_theta(p, market, grid, cfg.theta)?;
            let j = cost(&v, data, p, cfg)?;
            trial_cache = Some((*p, v));
            Ok(j)
        };
        let search = projected_armijo_search_with_cost(&mut f, &u, j_curr, &g, cfg.gamma, cfg);
        let (sigma, u_next, j_next) = match search {
            Ok(t) => t,
            Err(Error::LineSearchFailure(_)) => break TerminationStatus::LineSearchFailure,
            Err(e) => return Err(e),
        };

        if u_next == u {
            // Projected stationary point: the raw gradient still exceeds the
            // tolerance but no feasible displacement remains.
            break TerminationStatus::Converged;
        }

        let mut step = [0.0; 4];
        for c in 0..4 {
            step[c] = u_next.as_array()[c] - u.as_array()[c];
        }
        steps.push(AcceptedStep { sigma, cost_before: j_curr, cost_after: j_next, step });

        if let Some((p, v)) = trial_cache {
            if p == u_next {
                cached = Some((p, v, j_next));
            }
        }
        u = u_next;
    };

    let j0 = cost_history[0];
    let j_final = *cost_history.last().expect("nonempty history");
    let improvement = if j0 > 0.0 { (j0 - j_final) / j0 } else { 0.0 };

    Ok(CalibrationResult {
        params: u,
        iterations: steps.len(),
        cost_history,
        grad_norm_history: grad_norms,
        steps,
        status,
        improvement,
    })
}
