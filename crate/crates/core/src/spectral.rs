//! Full eigen-decomposition of a transition matrix: the harmonics of the
//! environment.
//!
//! Eigenvalues come from a dense real Schur factorisation. Each cluster of
//! equal eigenvalues gets its right eigenvectors from the null space of
//! `A - λI` (smallest singular vectors), which also handles repeated
//! eigenvalues on symmetric grids. Left eigenvectors are the rows of the
//! inverse of the right-eigenvector matrix, so `φ_i · π_j = δ_ij`.
//!
//! Harmonics are indexed from zero in order of descending `|λ|`, ties broken
//! by descending signed `λ`, then by solver order. Every right vector is
//! stored L2-normalised with its largest-magnitude entry positive (lowest
//! index wins a tie).

use nalgebra::{DMatrix, DVector};

use crate::env::TransitionMatrix;
use crate::error::{Error, Result};

/// Imaginary parts above this are a hard error.
pub const REALNESS_TOL: f64 = 1e-8;
/// Eigen-residual bound `‖Aπ − λπ‖∞` a basis must satisfy.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Eigenvalues closer than this are treated as one repeated eigenvalue.
const CLUSTER_TOL: f64 = 1e-9;
/// Relative tie window for the sign convention.
const SIGN_TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormalizationMode {
    L1,
    L2,
    MaxAbs,
}

impl NormalizationMode {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormalizationMode::L1 => v.iter().map(|x| x.abs()).sum(),
            NormalizationMode::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormalizationMode::MaxAbs => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// Positive rescaling of `v` to unit norm in `mode`.
pub fn normalize(v: &[f64], mode: NormalizationMode) -> Result<Vec<f64>> {
    let norm = mode.norm(v);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Degenerate(
            "cannot normalise a zero or non-finite vector".into(),
        ));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
    right: Vec<Vec<f64>>,
    left: Vec<Vec<f64>>,
    /// Position of each harmonic in the solver's eigenvalue output.
    ordering: Vec<usize>,
    condition: f64,
}

impl SpectralBasis {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, i: usize) -> f64 {
        self.eigenvalues[i]
    }

    /// Right eigenvector `π_i`, L2-normalised.
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.right[i]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.right
    }

    /// Left eigenvector `φ_i`, scaled so that `φ_i · π_i = 1`.
    pub fn left_vector(&self, i: usize) -> &[f64] {
        &self.left[i]
    }

    /// `π_i` rescaled to unit norm in `mode`, sign preserved.
    pub fn harmonic(&self, i: usize, mode: NormalizationMode) -> Vec<f64> {
        normalize(&self.right[i], mode).expect("eigenvectors are non-zero")
    }

    /// Solver-order position of each harmonic.
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// 2-norm condition number of the right-eigenvector matrix.
    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// Right eigenvectors as matrix columns.
    pub fn right_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.right[j][i])
    }

    /// Coefficients of `x` in the harmonic basis (`x = Σ c_i π_i`).
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.left.iter().map(|phi| dot(phi, x)).collect()
    }

    pub fn reconstruct(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (c, v) in coefficients.iter().zip(&self.right) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Decomposes a transition matrix into its harmonics.
pub fn decompose(p: &TransitionMatrix) -> Result<SpectralBasis> {
    decompose_dense(&p.to_dense())
}

/// Eigen-decomposition of an arbitrary real square matrix with a real,
/// diagonalisable spectrum.
pub fn decompose_dense(a: &DMatrix<f64>) -> Result<SpectralBasis> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidDimension(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(1.0);

    let raw = a.complex_eigenvalues();
    let mut values = Vec::with_capacity(n);
    for z in raw.iter() {
        if z.im.abs() > REALNESS_TOL {
            return Err(Error::ComplexSpectrum { re: z.re, im: z.im });
        }
        values.push(z.re);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&k| ordering_key(values[k], k));

    // Group equal eigenvalues so each group shares one null-space solve.
    let mut by_value: Vec<usize> = (0..n).collect();
    by_value.sort_by(|&x, &y| values[x].total_cmp(&values[y]).then(x.cmp(&y)));
    let mut vector_of = vec![Vec::new(); n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[by_value[end]] - values[by_value[end - 1]] <= CLUSTER_TOL * scale {
            end += 1;
        }
        let members = &by_value[start..end];
        let mean = members.iter().map(|&k| values[k]).sum::<f64>() / members.len() as f64;
        let basis = null_space(a, mean, members.len(), scale)?;
        // Members in solver order receive the null-space vectors in order.
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        for (k, v) in sorted.into_iter().zip(basis) {
            vector_of[k] = v;
        }
        start = end;
    }

    let eigenvalues: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    let right: Vec<Vec<f64>> = order
        .iter()
        .map(|&k| sign_convention(std::mem::take(&mut vector_of[k])))
        .collect();

    let v = DMatrix::from_fn(n, n, |i, j| right[j][i]);
    let sv = v.clone().singular_values();
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| {
        (hi.max(s), lo.min(s))
    });
    let inverse = v
        .clone()
        .try_inverse()
        .filter(|_| smin > 0.0)
        .ok_or_else(|| Error::NonDiagonalizable("eigenvector matrix is singular".into()))?;
    let left: Vec<Vec<f64>> = (0..n)
        .map(|i| inverse.row(i).iter().copied().collect())
        .collect();

    for (i, (lambda, pi)) in eigenvalues.iter().zip(&right).enumerate() {
        let api = a * DVector::from_column_slice(pi);
        let res = api
            .iter()
            .zip(pi)
            .fold(0.0f64, |m, (x, y)| m.max((x - lambda * y).abs()));
        if !(res < RESIDUAL_TOL * scale) {
            return Err(Error::NonDiagonalizable(format!(
                "eigen-residual {res:e} for harmonic {i} (lambda = {lambda})"
            )));
        }
    }

    Ok(SpectralBasis {
        eigenvalues,
        right,
        left,
        ordering: order,
        condition: smax / smin,
    })
}

/// Sort key: descending `|λ|`, then descending `λ`, then solver position.
/// Values are snapped to a 1e-12 grid so numerically equal magnitudes tie.
fn ordering_key(lambda: f64, k: usize) -> (i64, i64, usize) {
    let snap = |x: f64| (x * 1e12).round() as i64;
    (-snap(lambda.abs()), -snap(lambda), k)
}

/// Orthonormal basis of the `mult` smallest right singular vectors of
/// `A − λI`.
fn null_space(a: &DMatrix<f64>, lambda: f64, mult: usize, scale: f64) -> Result<Vec<Vec<f64>>> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
    let worst = svd.singular_values[idx[mult - 1]];
    if worst > 1e-6 * scale {
        return Err(Error::NonDiagonalizable(format!(
            "eigenvalue {lambda} has algebraic multiplicity {mult} but a smaller eigenspace \
             (singular value {worst:e})"
        )));
    }
    Ok(idx[..mult]
        .iter()
        .map(|&k| vt.row(k).iter().copied().collect())
        .collect())
}

/// L2-normalises and flips so the first entry of largest magnitude is
/// positive.
fn sign_convention(v: Vec<f64>) -> Vec<f64> {
    let mut v = normalize(&v, NormalizationMode::L2).expect("null-space vectors are unit length");
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let lead = v
        .iter()
        .position(|x| x.abs() >= peak * (1.0 - SIGN_TIE))
        .expect("non-empty vector");
    if v[lead] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Stationary distribution `π_1`, L1-normalised with positive entries.
pub fn steady_state(basis: &SpectralBasis) -> Vec<f64> {
    basis.harmonic(0, NormalizationMode::L1)
}
