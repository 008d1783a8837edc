//! Dense re-implementation of the mCS stage system, used as an oracle for
//! the banded stepping. Matrices are recovered by probing the operator
//! applications with unit basis fields, so this checks the stage algebra
//! and the line solves, not the stencils (those have their own tests).

use nalgebra::{DMatrix, DVector};

use crate::grid::Field;
use crate::operators::SplitOperators;

fn flatten(f: &Field) -> DVector<f64> {
    DVector::from_iterator(f.len(), f.iter().copied())
}

fn unflatten(v: &DVector<f64>, ni: usize, nj: usize) -> Field {
    Field::from_shape_vec((ni, nj), v.iter().copied().collect()).unwrap()
}

fn probe(ops: &SplitOperators, apply: impl Fn(&Field) -> Field) -> DMatrix<f64> {
    let (ni, nj) = ops.grid.field_shape();
    let dim = ni * nj;
    let mut m = DMatrix::zeros(dim, dim);
    let mut basis = Field::zeros((ni, nj));
    for col in 0..dim {
        basis.fill(0.0);
        basis[[col / nj, col % nj]] = 1.0;
        let out = apply(&basis);
        m.set_column(col, &flatten(&out));
    }
    m
}

/// Replaces the x-boundary rows of a stage matrix with identity rows.
fn replace_dirichlet_rows(m: &mut DMatrix<f64>, ni: usize, nj: usize) {
    for j in 0..nj {
        for row in [j, (ni - 1) * nj + j] {
            for col in 0..ni * nj {
                m[(row, col)] = 0.0;
            }
            m[(row, row)] = 1.0;
        }
    }
}

fn pin_dirichlet(rhs: &mut DVector<f64>, ops: &SplitOperators, tau: f64) {
    let (ni, nj) = ops.grid.field_shape();
    let low = ops.dirichlet.low(tau);
    let high = ops.dirichlet.high(tau);
    for j in 0..nj {
        rhs[j] = low;
        rhs[(ni - 1) * nj + j] = high;
    }
}

/// One mCS step computed with dense matrices and dense LU solves.
pub(crate) fn dense_mcs_step(
    ops: &SplitOperators,
    v: &Field,
    k: usize,
    theta: f64,
    dtau: f64,
    source: Option<&Field>,
) -> Field {
    let (ni, nj) = ops.grid.field_shape();
    let dim = ni * nj;
    let tau_next = (k as f64 + 1.0) * dtau;
    let th_dt = theta * dtau;

    let f0 = probe(ops, |f| ops.apply_f0(f));
    let fx = probe(ops, |f| ops.apply_fx(f));
    let fnu = probe(ops, |f| ops.apply_fnu(f));
    let f_full = &f0 + &fx + &fnu;

    let mut ax = DMatrix::identity(dim, dim) - th_dt * &fx;
    replace_dirichlet_rows(&mut ax, ni, nj);
    let ax_lu = ax.lu();
    let anu = DMatrix::identity(dim, dim) - th_dt * &fnu;
    let anu_lu = anu.lu();

    let vf = flatten(v);
    let f_v = &f_full * &vf;
    let fx_v = &fx * &vf;
    let fnu_v = &fnu * &vf;
    let f0_v = &f0 * &vf;

    let mut y0 = &vf + dtau * &f_v;
    if let Some(src) = source {
        let mut masked = src.clone();
        for j in 0..nj {
            masked[[0, j]] = 0.0;
            masked[[ni - 1, j]] = 0.0;
        }
        for i in 0..ni {
            masked[[i, 0]] = 0.0;
            masked[[i, nj - 1]] = 0.0;
        }
        y0 += dtau * flatten(&masked);
    }

    let mut rhs = &y0 - th_dt * &fx_v;
    pin_dirichlet(&mut rhs, ops, tau_next);
    let yx = ax_lu.solve(&rhs).unwrap();

    let rhs = &yx - th_dt * &fnu_v;
    let ynu = anu_lu.solve(&rhs).unwrap();

    let yh0 = &y0 + th_dt * (&f0 * &ynu - &f0_v);
    let yt0 = &yh0 + (0.5 - theta) * dtau * (&f_full * &ynu - &f_v);

    let mut rhs = &yt0 - th_dt * &fx_v;
    pin_dirichlet(&mut rhs, ops, tau_next);
    let ytx = ax_lu.solve(&rhs).unwrap();

    let rhs = &ytx - th_dt * &fnu_v;
    let mut ytnu = anu_lu.solve(&rhs).unwrap();

    pin_dirichlet(&mut ytnu, ops, tau_next);
    unflatten(&ytnu, ni, nj)
}
