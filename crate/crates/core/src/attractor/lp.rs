//! Small linear programs with free variables:
//!
//! ```text
//! minimise  cᵀx   subject to   A x ≤ b
//! ```
//!
//! Design problems have a handful of variables and many constraints, so the
//! dual `min bᵀy  s.t.  Aᵀy = −c, y ≥ 0` is solved instead with a revised
//! simplex whose basis is only `p × p`. The basis is refactorised at every
//! pivot and `x` is read off the simplex multipliers. Pivoting uses
//! Dantzig's rule and switches to Bland's rule after a run of degenerate
//! pivots so it cannot cycle.

use nalgebra::{DMatrix, DVector};

const COST_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpFailure {
    Infeasible,
    Unbounded,
    IterationLimit,
    Singular,
}

/// Minimises `cᵀx` over free `x` subject to `A x ≤ b`.
///
/// Rows and columns are equilibrated to unit max-norm before the solve;
/// the answer is mapped back to the original variables.
pub fn minimize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution, LpFailure> {
    let p = c.len();
    let m = a.len();
    assert_eq!(b.len(), m);
    assert!(a.iter().all(|row| row.len() == p));

    let mut col_scale = vec![1.0; p];
    for (k, s) in col_scale.iter_mut().enumerate() {
        let big = a.iter().fold(0.0f64, |acc, row| acc.max(row[k].abs()));
        if big > 0.0 {
            *s = 1.0 / big;
        }
    }
    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for (row, &bi) in a.iter().zip(b) {
        let scaled: Vec<f64> = row.iter().zip(&col_scale).map(|(v, s)| v * s).collect();
        let big = scaled.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let r = if big > 0.0 { 1.0 / big } else { 1.0 };
        rows.push(scaled.iter().map(|v| v * r).collect::<Vec<f64>>());
        rhs.push(bi * r);
    }
    let cost: Vec<f64> = c.iter().zip(&col_scale).map(|(v, s)| v * s).collect();
    let y = solve_dual(&cost, &rows, &rhs)?;
    let x: Vec<f64> = y.iter().zip(&col_scale).map(|(v, s)| v * s).collect();
    // the dual proves optimality, not primal feasibility to the last bit
    for (row, &bi) in a.iter().zip(b) {
        let lhs: f64 = row.iter().zip(&x).map(|(u, v)| u * v).sum();
        let scale = row
            .iter()
            .zip(&x)
            .fold(bi.abs(), |m, (u, v)| m.max((u * v).abs()));
        if lhs - bi > FEAS_TOL * scale.max(1.0) {
            return Err(LpFailure::Singular);
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    Ok(LpSolution { x, objective })
}

/// Revised simplex on `min bᵀy  s.t.  Aᵀy = −c, y ≥ 0`; returns the
/// multipliers of the equality rows, which are the primal `x`.
fn solve_dual(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, LpFailure> {
    let p = c.len();
    let m = a.len();
    // Equality rows k: Σ_i a[i][k] y_i = −c_k, flipped so the right side is ≥ 0.
    let sign: Vec<f64> = c
        .iter()
        .map(|&ck| if -ck < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let rhs = DVector::from_fn(p, |k, _| -c[k] * sign[k]);
    // Columns 0..m are y, m..m+p artificials.
    let column = |j: usize| -> DVector<f64> {
        if j < m {
            DVector::from_fn(p, |k, _| a[j][k] * sign[k])
        } else {
            let mut e = DVector::zeros(p);
            e[j - m] = 1.0;
            e
        }
    };
    let width = m + p;
    let mut basis: Vec<usize> = (m..width).collect();

    let phase1: Vec<f64> = (0..width).map(|j| if j >= m { 1.0 } else { 0.0 }).collect();
    let all = vec![true; width];
    run(&mut basis, &phase1, &all, &column, &rhs, p)?;
    let xb = basic_values(&basis, &column, &rhs, p)?;
    let infeas: f64 = basis
        .iter()
        .zip(xb.iter())
        .filter(|(&j, _)| j >= m)
        .map(|(_, v)| v.abs())
        .sum();
    if infeas > FEAS_TOL * (1.0 + rhs.amax()) {
        // no dual-feasible point: the primal is unbounded (or infeasible)
        return Err(LpFailure::Unbounded);
    }
    // Push zero-level artificials out where some real column can replace them.
    for r in 0..p {
        if basis[r] < m {
            continue;
        }
        let bm = basis_matrix(&basis, &column, p);
        let lu = bm.lu();
        for j in 0..m {
            if basis.contains(&j) {
                continue;
            }
            if let Some(u) = lu.solve(&column(j)) {
                if u[r].abs() > 1e-7 {
                    basis[r] = j;
                    break;
                }
            }
        }
    }

    let phase2: Vec<f64> = (0..width).map(|j| if j < m { b[j] } else { 0.0 }).collect();
    let real: Vec<bool> = (0..width).map(|j| j < m).collect();
    run(&mut basis, &phase2, &real, &column, &rhs, p)?;

    let bm = basis_matrix(&basis, &column, p);
    let cb = DVector::from_fn(p, |r, _| phase2[basis[r]]);
    let pi = bm.transpose().lu().solve(&cb).ok_or(LpFailure::Singular)?;
    Ok((0..p).map(|k| pi[k] * sign[k]).collect())
}

fn basis_matrix(
    basis: &[usize],
    column: &impl Fn(usize) -> DVector<f64>,
    p: usize,
) -> DMatrix<f64> {
    let mut bm = DMatrix::zeros(p, p);
    for (r, &j) in basis.iter().enumerate() {
        bm.set_column(r, &column(j));
    }
    bm
}

fn basic_values(
    basis: &[usize],
    column: &impl Fn(usize) -> DVector<f64>,
    rhs: &DVector<f64>,
    p: usize,
) -> Result<DVector<f64>, LpFailure> {
    basis_matrix(basis, column, p)
        .lu()
        .solve(rhs)
        .ok_or(LpFailure::Singular)
}

fn run(
    basis: &mut [usize],
    cost: &[f64],
    allowed: &[bool],
    column: &impl Fn(usize) -> DVector<f64>,
    rhs: &DVector<f64>,
    p: usize,
) -> Result<(), LpFailure> {
    let width = cost.len();
    let mut degenerate = 0;
    for _ in 0..MAX_PIVOTS {
        let bm = basis_matrix(basis, column, p);
        let lu = bm.clone().lu();
        let xb = lu.solve(rhs).ok_or(LpFailure::Singular)?;
        let cb = DVector::from_fn(p, |r, _| cost[basis[r]]);
        let pi = bm.transpose().lu().solve(&cb).ok_or(LpFailure::Singular)?;

        let bland = degenerate >= DEGENERATE_RUN;
        let mut entering = None;
        let mut best = -COST_TOL;
        for j in 0..width {
            if !allowed[j] || basis.contains(&j) {
                continue;
            }
            let rc = cost[j] - column(j).dot(&pi);
            if rc < best {
                entering = Some(j);
                if bland {
                    break;
                }
                best = rc;
            }
        }
        let Some(q) = entering else {
            return Ok(());
        };
        let u = lu.solve(&column(q)).ok_or(LpFailure::Singular)?;
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..p {
            if u[r] <= PIVOT_TOL {
                continue;
            }
            let ratio = xb[r].max(0.0) / u[r];
            leave = match leave {
                Some((lr, lratio))
                    if !(ratio < lratio - 1e-13
                        || (ratio <= lratio + 1e-13 && basis[r] < basis[lr])) =>
                {
                    Some((lr, lratio))
                }
                _ => Some((r, ratio)),
            };
        }
        let Some((r, ratio)) = leave else {
            // the dual objective falls without bound: no primal point exists
            return Err(LpFailure::Infeasible);
        };
        degenerate = if ratio <= 1e-13 { degenerate + 1 } else { 0 };
        basis[r] = q;
    }
    Err(LpFailure::IterationLimit)
}
