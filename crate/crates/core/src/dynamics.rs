//! Exact vector iteration `v(t+1) = A v(t)`: the infinite-swarm limit of the
//! particle simulator and the oracle it is checked against.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sparse::SparseColumns;
use crate::spectral::{dot, SpectralBasis};

/// Iteration stops with an error once `‖v(t)‖₁` exceeds this multiple of `‖v(0)‖₁`.
pub const DIVERGENCE_FACTOR: f64 = 1e12;
/// Relative changes are measured against at least this fraction of `‖v(0)‖₁`,
/// so trajectories that decay to zero still converge.
pub const DECAY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCriterion {
    /// Bound on the relative L1 change per step.
    pub tolerance: f64,
    /// Consecutive steps the bound must hold.
    pub window: usize,
    pub max_steps: usize,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            window: 5,
            max_steps: 100_000,
        }
    }
}

impl ConvergenceCriterion {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.window == 0 || self.max_steps < self.window {
            return Err(Error::Config(format!(
                "convergence needs tolerance > 0, window >= 1, max_steps >= window; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub label: String,
    pub initial: Vec<f64>,
    /// `(t, v(t))` at the requested steps, increasing in `t`.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    /// First step at which the convergence window closed.
    pub converged_at: Option<usize>,
    pub limit: Option<Vec<f64>>,
    /// Iterate at the last step taken.
    pub last: Vec<f64>,
    pub steps: usize,
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Relative L1 distance between successive iterates.
pub fn relative_change(prev: &[f64], next: &[f64], scale: f64) -> f64 {
    let diff: f64 = prev.iter().zip(next).map(|(a, b)| (a - b).abs()).sum();
    let denom = l1(next).max(scale);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Iterates `A` from `v0` until the relative change stays below tolerance
/// for a full window, recording `v(t)` at every `t` in `snapshot_steps`
/// (step 0 included if asked for). Snapshots past convergence are still
/// produced by continuing the iteration.
pub fn iterate(
    label: &str,
    a: &SparseColumns,
    v0: &[f64],
    crit: &ConvergenceCriterion,
    snapshot_steps: &[usize],
) -> Result<Trajectory> {
    crit.validate()?;
    if v0.len() != a.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.dim(),
            got: v0.len(),
        });
    }
    let mut wanted: Vec<usize> = snapshot_steps.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let last_wanted = wanted.last().copied().unwrap_or(0);

    let norm0 = l1(v0);
    let floor = norm0 * DECAY_FLOOR;
    let mut v = v0.to_vec();
    let mut next = vec![0.0; v.len()];
    let mut snapshots = Vec::new();
    let mut want = wanted.iter().peekable();
    if want.peek() == Some(&&0) {
        snapshots.push((0, v.clone()));
        want.next();
    }
    let mut quiet = 0;
    let mut converged_at = None;
    let mut t = 0;
    while t < crit.max_steps && (converged_at.is_none() || t < last_wanted) {
        a.mul_vec_into(&v, &mut next);
        t += 1;
        let norm = l1(&next);
        if !norm.is_finite() || norm > DIVERGENCE_FACTOR * norm0 {
            return Err(Error::Divergence { step: t, norm });
        }
        if converged_at.is_none() {
            if relative_change(&v, &next, floor) < crit.tolerance {
                quiet += 1;
                if quiet >= crit.window {
                    converged_at = Some(t);
                }
            } else {
                quiet = 0;
            }
        }
        std::mem::swap(&mut v, &mut next);
        if want.peek() == Some(&&t) {
            snapshots.push((t, v.clone()));
            want.next();
        }
    }
    Ok(Trajectory {
        label: label.to_owned(),
        initial: v0.to_vec(),
        snapshots,
        converged_at,
        limit: converged_at.map(|_| v.clone()),
        last: v,
        steps: t,
    })
}

/// Limit of `Aᵗ v0` by repeated squaring of a dense copy of `A`.
///
/// `contraction` bounds `|μ|` over every eigenvalue of `A` other than the
/// unit one; enough squarings are taken for `contraction^(2^k)` to fall
/// below `tolerance`. Meant for designs whose margin is too thin for plain
/// iteration to finish.
pub fn limit_by_squaring(
    a: &SparseColumns,
    v0: &[f64],
    contraction: f64,
    tolerance: f64,
) -> Result<Vec<f64>> {
    if v0.len() != a.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.dim(),
            got: v0.len(),
        });
    }
    if !(0.0..1.0).contains(&contraction) || !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(Error::Config(format!(
            "squaring needs contraction and tolerance in [0, 1); got {contraction}, {tolerance}"
        )));
    }
    let squarings = if contraction == 0.0 {
        1
    } else {
        // (contraction)^(2^k) < tolerance  ⇔  2^k > ln tol / ln contraction
        let steps = tolerance.ln() / contraction.ln();
        (steps.log2().ceil().max(0.0) as usize + 1).min(64)
    };
    let mut m: DMatrix<f64> = a.to_dense();
    for _ in 0..squarings {
        m = &m * &m;
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence {
                step: 0,
                norm: f64::INFINITY,
            });
        }
    }
    let limit = m * DVector::from_column_slice(v0);
    Ok(limit.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionMode {
    /// `(v · π_a) / ‖π_a‖²`
    DotProduct,
    /// `(φ_a · v) / (φ_a · π_a)` with the left eigenvector `φ_a`.
    #[default]
    Exact,
}

/// Coefficient of harmonic `a` in `v`.
///
/// Only the exact mode is conserved by `M_a` in general; the dot-product mode
/// agrees with it when the eigenbasis is orthogonal.
pub fn project_coefficient(
    v: &[f64],
    basis: &SpectralBasis,
    a: usize,
    mode: ProjectionMode,
) -> Result<f64> {
    if a >= basis.dim() {
        return Err(Error::InvalidDimension(format!(
            "harmonic {a} out of range"
        )));
    }
    if v.len() != basis.dim() {
        return Err(Error::ShapeMismatch {
            expected: basis.dim(),
            got: v.len(),
        });
    }
    let pi = basis.vector(a);
    match mode {
        ProjectionMode::DotProduct => {
            let nn = dot(pi, pi);
            if nn == 0.0 {
                return Err(Error::IllConditionedProjection("zero harmonic".into()));
            }
            Ok(dot(v, pi) / nn)
        }
        ProjectionMode::Exact => {
            let phi = basis.left_vector(a);
            let d = dot(phi, pi);
            let scale = dot(phi, phi).sqrt() * dot(pi, pi).sqrt();
            if !(d.abs() > 1e-12 * scale) {
                return Err(Error::IllConditionedProjection(format!(
                    "left and right eigenvectors of harmonic {a} are nearly orthogonal ({d:e})"
                )));
            }
            Ok(dot(phi, v) / d)
        }
    }
}

/// Writes `t,v_0,…,v_{n-1}` rows for every snapshot.
pub fn write_trajectory_csv(traj: &Trajectory, out: &mut impl Write) -> Result<()> {
    let n = traj.initial.len();
    write!(out, "t")?;
    for i in 0..n {
        write!(out, ",v{i}")?;
    }
    writeln!(out)?;
    for (t, v) in &traj.snapshots {
        write!(out, "{t}")?;
        for x in v {
            write!(out, ",{x:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
