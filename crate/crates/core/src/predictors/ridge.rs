//! Ridge regression with a mean intercept, solved by conjugate gradient.
//!
//! With `b = mean(y)` the weights solve `(XᵀX + λI) w = Xᵀ(y − b)`. The
//! system matrix is applied matrix-free from the sparse rows, so the cost per
//! iteration is `O(nnz(X) + dim)`.

use super::features::SparseVec;
use crate::{Error, Result};

/// Relative residual required of every accepted solution.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Absolute residual bound used when the right-hand side is zero.
pub const ZERO_RHS_TOL: f64 = 1e-10;
/// CG stopping tolerance on the recursive residual; tighter than
/// [`RESIDUAL_TOL`] so the recomputed residual still passes.
const CG_TOL: f64 = 1e-11;
const MAX_RESTARTS: usize = 4;

/// Iteration cap per CG run: `4 · min(rows, dim) + 100`. The system has at
/// most `rank(X) + 1` distinct eigenvalues, so exact CG needs no more than
/// `min(rows, dim) + 1` steps.
pub fn max_iterations(rows: usize, dim: usize) -> usize {
    4 * rows.min(dim) + 100
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub iterations: usize,
    /// `‖(XᵀX + λI)w − Xᵀ(y−b)‖`, recomputed from scratch after solving.
    pub residual: f64,
    pub rhs_norm: f64,
}

impl RidgeSolution {
    pub fn predict_raw(&self, x: &SparseVec) -> f64 {
        x.dot_dense(&self.weights) + self.intercept
    }
}

struct Design<'a> {
    rows: &'a [SparseVec],
    dim: usize,
    lambda: f64,
}

impl Design<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(v) {
            *o = self.lambda * x;
        }
        for row in self.rows {
            let s = row.dot_dense(v);
            if s != 0.0 {
                for &(i, x) in &row.0 {
                    out[i] += s * x;
                }
            }
        }
    }

    fn xt(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (row, &ui) in self.rows.iter().zip(u) {
            for &(i, x) in &row.0 {
                out[i] += ui * x;
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual_vec(design: &Design, w: &[f64], rhs: &[f64]) -> Vec<f64> {
    let mut aw = vec![0.0; w.len()];
    design.apply(w, &mut aw);
    rhs.iter().zip(&aw).map(|(b, a)| b - a).collect()
}

pub fn solve_ridge(rows: &[SparseVec], dim: usize, y: &[f64], lambda: f64) -> Result<RidgeSolution> {
    if rows.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: y.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyTrain);
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Config(format!("ridge lambda must be finite and >= 0, got {lambda}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    if rows.iter().flat_map(|r| &r.0).any(|&(i, v)| !v.is_finite() || i >= dim) {
        return Err(Error::NonFinite("design matrix"));
    }

    let intercept = crate::util::mean(y);
    let centered: Vec<f64> = y.iter().map(|v| v - intercept).collect();
    let design = Design { rows, dim, lambda };
    let rhs = design.xt(&centered);
    let rhs_norm = norm(&rhs);
    let mut w = vec![0.0; dim];
    let mut iterations = 0;

    if rhs_norm > 0.0 {
        let cap = max_iterations(rows.len(), dim);
        for _ in 0..MAX_RESTARTS {
            let mut r = residual_vec(&design, &w, &rhs);
            if norm(&r) <= RESIDUAL_TOL * rhs_norm * 1e-2 {
                break;
            }
            let mut p = r.clone();
            let mut ap = vec![0.0; dim];
            let mut rr = dot(&r, &r);
            for _ in 0..cap {
                design.apply(&p, &mut ap);
                let pap = dot(&p, &ap);
                if pap <= 0.0 {
                    break;
                }
                let alpha = rr / pap;
                for i in 0..dim {
                    w[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                }
                iterations += 1;
                let rr_next = dot(&r, &r);
                if rr_next.sqrt() <= CG_TOL * rhs_norm {
                    break;
                }
                let beta = rr_next / rr;
                for i in 0..dim {
                    p[i] = r[i] + beta * p[i];
                }
                rr = rr_next;
            }
            if norm(&residual_vec(&design, &w, &rhs)) <= RESIDUAL_TOL * rhs_norm {
                break;
            }
        }
    }

    let residual = norm(&residual_vec(&design, &w, &rhs));
    let bound = if rhs_norm > 0.0 {
        RESIDUAL_TOL * rhs_norm
    } else {
        ZERO_RHS_TOL
    };
    if residual.is_nan() || residual > bound {
        return Err(Error::NonConvergence {
            iterations,
            residual: if rhs_norm > 0.0 { residual / rhs_norm } else { residual },
        });
    }
    Ok(RidgeSolution {
        weights: w,
        intercept,
        lambda,
        iterations,
        residual,
        rhs_norm,
    })
}
