//! Forward-in-tau solve of the pricing equation with the modified
//! Craig-Sneyd ADI scheme.
//!
//! One step from v^k advances through the stages
//!
//!   Y_0  = v^k + dtau * F(v^k)                       (fully explicit)
//!   Y_x  : (I - theta dtau Fx) Y_x  = Y_0  - theta dtau Fx v^k
//!   Y_nu : (I - theta dtau Fnu) Y_nu = Y_x - theta dtau Fnu v^k
//!   Yh_0 = Y_0 + theta dtau (F0 Y_nu - F0 v^k)
//!   Yt_0 = Yh_0 + (1/2 - theta) dtau (F Y_nu - F v^k)
//!   Yt_x : (I - theta dtau Fx) Yt_x = Yt_0 - theta dtau Fx v^k
//!   Yt_nu: (I - theta dtau Fnu) Yt_nu = Yt_x - theta dtau Fnu v^k
//!
//! with v^{k+1} = Yt_nu. Implicit stages pin the x-boundary rows to the
//! analytic Dirichlet data at tau_{k+1}; the data is re-imposed once more
//! after the full step so splitting error never contaminates it.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::market::{HestonParams, MarketSpec};
use crate::operators::{assemble_operators, SplitOperators, StageSolver};

/// Scheme parameter of the modified Craig-Sneyd stepping.
pub const THETA_MCS: f64 = 2.0 / 3.0;

/// A time-indexed sequence of nodal fields, fields[k] at tau_k.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    fields: Vec<Field>,
}

impl Trajectory {
    pub fn new(grid: Grid, fields: Vec<Field>) -> Self {
        debug_assert_eq!(fields.len(), grid.n_tau + 1);
        Self { grid, fields }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, k: usize) -> &Field {
        &self.fields[k]
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    /// Pointwise difference self - other, rejecting mismatched meshes.
    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(
                "trajectories live on different meshes".to_string(),
            ));
        }
        let fields = self
            .fields
            .iter()
            .zip(other.fields.iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Trajectory { grid: self.grid, fields })
    }
}

/// Transformed put payoff on the grid: value (i, j) is max(K - exp(x_i), 0),
/// independent of j.
pub fn initial_condition(grid: &Grid, market: &MarketSpec) -> Field {
    let mut f = grid.zero_field();
    for i in 0..=grid.n_x {
        let payoff = (market.strike - grid.x(i).exp()).max(0.0);
        for j in 0..=grid.n_nu {
            f[[i, j]] = payoff;
        }
    }
    f
}

fn impose_dirichlet(ops: &SplitOperators, field: &mut Field, tau: f64) {
    let (ni, nj) = ops.grid.field_shape();
    let low = ops.dirichlet.low(tau);
    let high = ops.dirichlet.high(tau);
    for j in 0..nj {
        field[[0, j]] = low;
        field[[ni - 1, j]] = high;
    }
}

/// One mCS step from tau_k = k * dtau to tau_k + dtau.
pub fn mcs_step(
    v: &Field,
    k: usize,
    ops: &SplitOperators,
    theta: f64,
    dtau: f64,
) -> Result<Field> {
    mcs_step_with_source(v, k, ops, theta, dtau, None)
}

/// mCS step with an explicit source injected into the Y_0 stage on interior
/// nodes (used by the adjoint and by linearized solves).
pub fn mcs_step_with_source(
    v: &Field,
    k: usize,
    ops: &SplitOperators,
    theta: f64,
    dtau: f64,
    source: Option<&Field>,
) -> Result<Field> {
    let solver = ops.stage_solver(theta * dtau);
    mcs_step_factored(v, k, ops, &solver, theta, dtau, source)
}

/// mCS step with pre-factored stage systems (the march factors them once).
fn mcs_step_factored(
    v: &Field,
    k: usize,
    ops: &SplitOperators,
    solver: &StageSolver,
    theta: f64,
    dtau: f64,
    source: Option<&Field>,
) -> Result<Field> {
    let grid = &ops.grid;
    let (ni, nj) = grid.field_shape();
    let tau_next = (k as f64 + 1.0) * dtau;
    let th_dt = theta * dtau;

    let (f_v, f0_v) = ops.apply_full_and_f0(v);
    let fx_v = ops.apply_fx(v);

    let vs = v.as_slice().expect("standard layout");
    let f_vs = f_v.as_slice().expect("standard layout");
    let f0_vs = f0_v.as_slice().expect("standard layout");
    let fx_vs = fx_v.as_slice().expect("standard layout");

    // Y_0 = v + dtau F(v) (+ dtau * source on interior nodes).
    let mut y0 = Field::zeros((ni, nj));
    {
        let y0s = y0.as_slice_mut().expect("standard layout");
        for idx in 0..vs.len() {
            y0s[idx] = vs[idx] + dtau * f_vs[idx];
        }
        if let Some(src) = source {
            let ss = src.as_slice().expect("standard layout");
            for i in 1..ni - 1 {
                let b = i * nj;
                for j in 1..nj - 1 {
                    y0s[b + j] += dtau * ss[b + j];
                }
            }
        }
    }

    // Y_x: (I - th Fx) Y_x = Y_0 - th Fx v, with pinned boundary rows.
    let mut yx = y0.clone();
    {
        let ys = yx.as_slice_mut().expect("standard layout");
        for idx in 0..ys.len() {
            ys[idx] -= th_dt * fx_vs[idx];
        }
    }
    solver.solve_x(&mut yx, tau_next)?;

    // Y_nu: (I - th Fnu) Y_nu = Y_x - th Fnu v. Fnu v = F v - Fx v - F0 v.
    let mut ynu = yx;
    {
        let ys = ynu.as_slice_mut().expect("standard layout");
        for idx in 0..ys.len() {
            ys[idx] -= th_dt * (f_vs[idx] - fx_vs[idx] - f0_vs[idx]);
        }
    }
    solver.solve_nu(&mut ynu)?;

    // Yt_0 = Y_0 + th (F0 Y_nu - F0 v) + (1/2 - theta) dtau (F Y_nu - F v).
    let (f_y, f0_y) = ops.apply_full_and_f0(&ynu);
    let half_shift = (0.5 - theta) * dtau;
    let mut ytx = y0;
    {
        let f_ys = f_y.as_slice().expect("standard layout");
        let f0_ys = f0_y.as_slice().expect("standard layout");
        let ys = ytx.as_slice_mut().expect("standard layout");
        for idx in 0..ys.len() {
            ys[idx] += th_dt * (f0_ys[idx] - f0_vs[idx])
                + half_shift * (f_ys[idx] - f_vs[idx])
                - th_dt * fx_vs[idx];
        }
    }
    solver.solve_x(&mut ytx, tau_next)?;

    let mut ytnu = ytx;
    {
        let ys = ytnu.as_slice_mut().expect("standard layout");
        for idx in 0..ys.len() {
            ys[idx] -= th_dt * (f_vs[idx] - fx_vs[idx] - f0_vs[idx]);
        }
    }
    solver.solve_nu(&mut ytnu)?;

    impose_dirichlet(ops, &mut ytnu, tau_next);
    Ok(ytnu)
}

/// Marches an arbitrary initial field through n_tau mCS steps under the
/// given operators, with an optional explicit source; the driver behind
/// both the pricing and the adjoint solves, exposed for linearized
/// (tangent) solves and duality diagnostics.
pub fn solve_linear(
    ops: &SplitOperators,
    initial: Field,
    source: Option<&Trajectory>,
    theta: f64,
) -> Result<Trajectory> {
    march(ops, initial, source, theta, "linear solve")
}

/// Marches `initial` through n_tau mCS steps, storing the full trajectory.
/// `source` provides one field per time level; each step consumes the
/// average of its two bracketing levels.
pub(crate) fn march(
    ops: &SplitOperators,
    mut initial: Field,
    source: Option<&Trajectory>,
    theta: f64,
    context: &'static str,
) -> Result<Trajectory> {
    let grid = ops.grid;
    impose_dirichlet(ops, &mut initial, 0.0);
    let solver = ops.stage_solver(theta * grid.dtau);
    let mut fields = Vec::with_capacity(grid.n_tau + 1);
    fields.push(initial);
    for k in 0..grid.n_tau {
        let src_avg = source.map(|s| 0.5 * (s.field(k) + s.field(k + 1)));
        let next = mcs_step_factored(
            &fields[k],
            k,
            ops,
            &solver,
            theta,
            grid.dtau,
            src_avg.as_ref(),
        )?;
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { context, step: k + 1 });
        }
        fields.push(next);
    }
    Ok(Trajectory::new(grid, fields))
}

/// Solves the pricing equation forward in tau from the put payoff and
/// returns the full state trajectory.
pub fn solve_forward(
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
) -> Result<Trajectory> {
    solve_forward_theta(params, market, grid, THETA_MCS)
}

/// As [`solve_forward`] with an explicit ADI parameter.
pub fn solve_forward_theta(
    params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
    theta: f64,
) -> Result<Trajectory> {
    let ops = assemble_operators(params, market, grid)?;
    let init = initial_condition(grid, market);
    march(&ops, init, None, theta, "forward solve")
}

/// Bilinear interpolation of trajectory[k] at spot s0 and variance nu0.
pub fn interpolate_price(traj: &Trajectory, s0: f64, nu0: f64, k: usize) -> Result<f64> {
    let grid = &traj.grid;
    let x = s0.ln();
    if !(x >= grid.x_min && x <= grid.x_max) || !(nu0 >= 0.0 && nu0 <= grid.nu_max) {
        return Err(Error::OutOfDomain { x, nu: nu0 });
    }
    let field = traj.field(k);

    let fx = (x - grid.x_min) / grid.dx;
    let fj = nu0 / grid.dnu;
    let i = (fx.floor() as usize).min(grid.n_x - 1);
    let j = (fj.floor() as usize).min(grid.n_nu - 1);
    let wx = fx - i as f64;
    let wj = fj - j as f64;

    Ok(field[[i, j]] * (1.0 - wx) * (1.0 - wj)
        + field[[i + 1, j]] * wx * (1.0 - wj)
        + field[[i, j + 1]] * (1.0 - wx) * wj
        + field[[i + 1, j + 1]] * wx * wj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, TruncationConfig};
    use crate::operators::DirichletData;
    use approx::assert_relative_eq;

    fn reference_params() -> HestonParams {
        HestonParams::new(0.9, 0.1, 5.0, 0.16)
    }

    fn default_market() -> MarketSpec {
        MarketSpec::new(10.0, 0.1, 0.05, 1.0).unwrap()
    }

    #[test]
    fn payoff_examples() {
        let market = default_market();
        // Pin the domain so strike-relative nodes are exact.
        let trunc = TruncationConfig {
            x_min: Some(10f64.ln() - 5.0),
            x_max: Some(10f64.ln() + 5.0),
            nu_max: 3.0,
        };
        let grid = build_grid(&market, 80, 80, 40, &trunc).unwrap();
        let f = initial_condition(&grid, &market);
        // ln K sits on node 40 of this grid: at-the-money payoff is zero.
        assert_relative_eq!(f[[40, 3]], 0.0, epsilon = 1e-12);
        // one log-unit in the money: K - K/e
        let expected = 10.0 - 10.0 * (-1.0f64).exp();
        assert_relative_eq!(f[[32, 0]], expected, epsilon = 1e-10);
        // out of the money
        assert_eq!(f[[48, 7]], 0.0);
    }

    #[test]
    fn zero_field_stays_zero_with_homogeneous_boundaries() {
        let market = default_market();
        let grid = build_grid(&market, 12, 10, 4, &TruncationConfig::default()).unwrap();
        let ops = assemble_operators(&reference_params(), &market, &grid)
            .unwrap()
            .with_dirichlet(DirichletData::Zero);
        let zero = grid.zero_field();
        let out = mcs_step(&zero, 0, &ops, THETA_MCS, grid.dtau).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_dtau_is_identity() {
        let market = default_market();
        let grid = build_grid(&market, 12, 10, 4, &TruncationConfig::default()).unwrap();
        let ops = assemble_operators(&reference_params(), &market, &grid).unwrap();
        let mut v = initial_condition(&grid, &market);
        impose_dirichlet(&ops, &mut v, 0.0);
        let out = mcs_step(&v, 0, &ops, 0.7, 0.0).unwrap();
        for (a, b) in v.iter().zip(out.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn dirichlet_rows_match_discounted_strike() {
        let market = default_market();
        let grid = build_grid(&market, 40, 30, 20, &TruncationConfig::default()).unwrap();
        let traj = solve_forward(&reference_params(), &market, &grid).unwrap();
        for k in 0..=grid.n_tau {
            let expected = market.strike * (-market.rate * grid.tau(k)).exp();
            for j in 0..=grid.n_nu {
                assert_relative_eq!(traj.field(k)[[0, j]], expected, epsilon = 1e-12);
                assert_eq!(traj.field(k)[[grid.n_x, j]], 0.0);
            }
        }
    }

    #[test]
    fn trajectory_starts_from_payoff_in_the_interior() {
        let market = default_market();
        let grid = build_grid(&market, 40, 30, 20, &TruncationConfig::default()).unwrap();
        let traj = solve_forward(&reference_params(), &market, &grid).unwrap();
        let payoff = initial_condition(&grid, &market);
        for i in 1..grid.n_x {
            for j in 0..=grid.n_nu {
                assert_eq!(traj.field(0)[[i, j]], payoff[[i, j]]);
            }
        }
    }

    #[test]
    fn monotone_bounds_on_default_grid() {
        let market = default_market();
        let grid = build_grid(&market, 80, 80, 40, &TruncationConfig::default()).unwrap();
        let traj = solve_forward(&reference_params(), &market, &grid).unwrap();
        // mCS is not monotone; the payoff kink produces first-step wiggles
        // of measured size ~1.4e-6 * K on this grid.
        let slack = 1e-5 * market.strike;
        for k in 0..=grid.n_tau {
            for v in traj.field(k).iter() {
                assert!(
                    (-slack..=market.strike + slack).contains(v),
                    "value {v} outside [0, K] at step {k}"
                );
            }
        }
    }

    #[test]
    fn put_value_nonincreasing_in_x() {
        let market = default_market();
        let grid = build_grid(&market, 80, 80, 40, &TruncationConfig::default()).unwrap();
        let traj = solve_forward(&reference_params(), &market, &grid).unwrap();
        // Same kink-wiggle allowance as the bounds test above.
        let slack = 1e-5 * market.strike;
        for k in 0..=grid.n_tau {
            let f = traj.field(k);
            for j in 0..=grid.n_nu {
                for i in 0..grid.n_x {
                    assert!(
                        f[[i + 1, j]] <= f[[i, j]] + slack,
                        "monotonicity violated at k={k}, i={i}, j={j}"
                    );
                }
            }
        }
    }

    #[test]
    fn homogeneous_solve_is_linear_in_initial_data() {
        let market = default_market();
        let grid = build_grid(&market, 24, 16, 8, &TruncationConfig::default()).unwrap();
        let ops = assemble_operators(&reference_params(), &market, &grid)
            .unwrap()
            .with_dirichlet(DirichletData::Zero);
        let base = initial_condition(&grid, &market);
        let alpha = 2.0;

        let t1 = march(&ops, base.clone(), None, THETA_MCS, "test").unwrap();
        let t2 = march(&ops, alpha * &base, None, THETA_MCS, "test").unwrap();
        for k in 0..=grid.n_tau {
            for (a, b) in t1.field(k).iter().zip(t2.field(k).iter()) {
                assert_relative_eq!(alpha * a, *b, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn matches_dense_stage_oracle_for_one_step() {
        let market = default_market();
        let grid = build_grid(&market, 10, 8, 4, &TruncationConfig::default()).unwrap();
        let ops = assemble_operators(&reference_params(), &market, &grid).unwrap();
        let mut v = initial_condition(&grid, &market);
        impose_dirichlet(&ops, &mut v, 0.0);

        let fast = mcs_step(&v, 0, &ops, THETA_MCS, grid.dtau).unwrap();
        let dense = crate::testutil::dense_mcs_step(&ops, &v, 0, THETA_MCS, grid.dtau, None);
        for (a, b) in fast.iter().zip(dense.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn temporal_self_convergence_order() {
        let market = default_market();
        let params = reference_params();
        let trunc = TruncationConfig::default();
        let mut prices = Vec::new();
        for n_tau in [10, 20, 40] {
            let grid = build_grid(&market, 48, 48, n_tau, &trunc).unwrap();
            let traj = solve_forward(&params, &market, &grid).unwrap();
            prices.push(interpolate_price(&traj, 10.0, 0.16, grid.n_tau).unwrap());
        }
        let e1 = (prices[0] - prices[1]).abs();
        let e2 = (prices[1] - prices[2]).abs();
        let order = (e1 / e2).log2();
        assert!(order >= 1.5, "measured temporal order {order} below 1.5");
    }

    #[test]
    fn interpolation_examples() {
        let market = default_market();
        let grid = build_grid(&market, 8, 8, 4, &TruncationConfig::default()).unwrap();
        // Bilinear test field x + 2 nu.
        let mut f = grid.zero_field();
        for i in 0..=grid.n_x {
            for j in 0..=grid.n_nu {
                f[[i, j]] = grid.x(i) + 2.0 * grid.nu(j);
            }
        }
        let fields = vec![f; grid.n_tau + 1];
        let traj = Trajectory::new(grid, fields);

        // exactly at a node
        let v = interpolate_price(&traj, grid.x(3).exp(), grid.nu(2), 0).unwrap();
        assert_relative_eq!(v, grid.x(3) + 2.0 * grid.nu(2), epsilon = 1e-12);

        // at a cell centre: mean of the four corners of a bilinear field
        let xc = 0.5 * (grid.x(3) + grid.x(4));
        let nuc = 0.5 * (grid.nu(2) + grid.nu(3));
        let v = interpolate_price(&traj, xc.exp(), nuc, 0).unwrap();
        let corners = [
            traj.field(0)[[3, 2]],
            traj.field(0)[[4, 2]],
            traj.field(0)[[3, 3]],
            traj.field(0)[[4, 3]],
        ];
        assert_relative_eq!(v, corners.iter().sum::<f64>() / 4.0, epsilon = 1e-12);

        // outside the domain
        assert!(interpolate_price(&traj, (grid.x_max + 1.0).exp(), 0.1, 0).is_err());
    }

    #[test]
    fn residual_requires_matching_grids() {
        let market = default_market();
        let grid_a = build_grid(&market, 8, 8, 4, &TruncationConfig::default()).unwrap();
        let grid_b = build_grid(&market, 10, 8, 4, &TruncationConfig::default()).unwrap();
        let ta = Trajectory::new(grid_a, vec![grid_a.zero_field(); grid_a.n_tau + 1]);
        let tb = Trajectory::new(grid_b, vec![grid_b.zero_field(); grid_b.n_tau + 1]);
        assert!(ta.sub(&tb).is_err());
        assert!(ta.sub(&ta.clone()).is_ok());
    }
}
