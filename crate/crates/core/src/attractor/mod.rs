//! Harmonic attractor matrices `M_a = f(P − λ_a I)`.
//!
//! `f(u) = 1 + κ_1 u + … + κ_r u^r` always has a unit constant term, so
//! `M_a π_i = f(λ_i − λ_a) π_i` and `π_a` keeps eigenvalue 1. A design is
//! good when every other harmonic maps strictly inside the unit interval.
//! Harmonic indices are zero-based.

mod kernel;
pub mod lp;

pub use kernel::{
    extract_kernels, parse_kernel_table, write_kernel_table, Kernel, KernelTable, Offset,
};

use crate::env::TransitionMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseColumns;
use crate::spectral::SpectralBasis;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Default lower bound `−β` for the optimised design.
pub const DEFAULT_BETA: f64 = 0.0;
/// Default spectral margin `ε` for the optimised design.
pub const DEFAULT_EPSILON: f64 = 1e-2;
/// Slack allowed when checking design constraints after the solve.
pub const CONSTRAINT_TOL: f64 = 1e-9;
/// Assembly fails when an eigen-residual exceeds this.
pub const ASSEMBLY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    /// `f(u) = 1 − (β+1) u² / Δ²`
    SecondOrder,
    /// `f(u) = 1 − 3(β+1) u² / Δ² + 2(β+1) u⁴ / Δ⁴`
    FourthOrder,
    /// `f(u) = 1 + u`, only for the stationary harmonic.
    FirstOrder,
    /// Minimax over the spectrum, solved as a linear program.
    Optimized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialDesign {
    pub kind: DesignKind,
    pub target: usize,
    /// `κ_1 … κ_r`; the constant term is always 1.
    pub coefficients: Vec<f64>,
    pub beta: f64,
    pub epsilon: f64,
    /// `Δ_a = max_i |λ_i − λ_a|`.
    pub delta: f64,
    /// `max_{i≠a} f(λ_i − λ_a)` (signed); `−∞` for a one-state chain.
    pub achieved_gap: f64,
}

impl PolynomialDesign {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// Horner evaluation of `f(u)`.
    pub fn eval(&self, u: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, &k| (acc + k) * u)
            + 1.0
    }

    /// `f(λ_i − λ_a)` for every harmonic `i`.
    pub fn mapped_eigenvalues(&self, basis: &SpectralBasis) -> Vec<f64> {
        let la = basis.eigenvalue(self.target);
        basis
            .eigenvalues()
            .iter()
            .map(|&l| self.eval(l - la))
            .collect()
    }

    /// `1 − max_{i≠a} |f(λ_i − λ_a)|`.
    pub fn eigen_gap(&self, basis: &SpectralBasis) -> f64 {
        let worst = self
            .mapped_eigenvalues(basis)
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.target)
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        1.0 - worst
    }

    fn finish(mut self, basis: &SpectralBasis) -> Self {
        self.achieved_gap = self
            .mapped_eigenvalues(basis)
            .into_iter()
            .enumerate()
            .filter(|&(i, _)| i != self.target)
            .map(|(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        self
    }
}

fn check_target(basis: &SpectralBasis, a: usize) -> Result<()> {
    if a >= basis.dim() {
        return Err(Error::InvalidDimension(format!(
            "harmonic {a} out of range for {} states",
            basis.dim()
        )));
    }
    Ok(())
}

fn spread(basis: &SpectralBasis, a: usize) -> f64 {
    let la = basis.eigenvalue(a);
    basis
        .eigenvalues()
        .iter()
        .fold(0.0f64, |m, &l| m.max((l - la).abs()))
}

/// Closed-form even polynomial of order 2 or 4.
pub fn design_closed_form(
    basis: &SpectralBasis,
    a: usize,
    order: usize,
    beta: f64,
) -> Result<PolynomialDesign> {
    check_target(basis, a)?;
    if !(beta.abs() < 1.0) {
        return Err(Error::Config(format!(
            "closed-form designs need |beta| < 1, got {beta}"
        )));
    }
    let delta = spread(basis, a);
    if !(delta > 0.0) {
        return Err(Error::DegenerateSpectrum(format!(
            "all eigenvalues coincide with lambda_{a}"
        )));
    }
    let d2 = delta * delta;
    let (kind, coefficients) = match order {
        2 => (DesignKind::SecondOrder, vec![0.0, -(beta + 1.0) / d2]),
        4 => (
            DesignKind::FourthOrder,
            vec![
                0.0,
                -3.0 * (beta + 1.0) / d2,
                0.0,
                2.0 * (beta + 1.0) / (d2 * d2),
            ],
        ),
        _ => {
            return Err(Error::Config(format!(
                "closed-form designs exist for orders 2 and 4, not {order}"
            )))
        }
    };
    Ok(PolynomialDesign {
        kind,
        target: a,
        coefficients,
        beta,
        epsilon: 0.0,
        delta,
        achieved_gap: f64::NAN,
    }
    .finish(basis))
}

/// `f(u) = 1 + u` for the stationary harmonic; `M_1` is `P` itself.
pub fn design_first_order_for_pi1(basis: &SpectralBasis) -> PolynomialDesign {
    PolynomialDesign {
        kind: DesignKind::FirstOrder,
        target: 0,
        coefficients: vec![1.0],
        beta: 1.0,
        epsilon: 0.0,
        delta: spread(basis, 0),
        achieved_gap: f64::NAN,
    }
    .finish(basis)
}

/// Order-`r` polynomial minimising `max_{i≠a} f(λ_i − λ_a)` subject to
/// `−β ≤ f(λ_i − λ_a) ≤ 1 − ε`.
///
/// The problem is linear in `κ` once the objective is written in epigraph
/// form, so it is solved exactly by the simplex routine. Arguments are
/// scaled by `Δ_a` before the solve to keep the monomials in `[−1, 1]`.
pub fn design_optimized(
    basis: &SpectralBasis,
    a: usize,
    order: usize,
    beta: f64,
    epsilon: f64,
) -> Result<PolynomialDesign> {
    check_target(basis, a)?;
    validate_parameters(order, beta, epsilon)?;
    let delta = spread(basis, a);
    let infeasible = |msg: String| Error::InfeasibleDesign {
        order,
        beta,
        epsilon,
        msg,
    };
    if basis.dim() == 1 {
        return Ok(PolynomialDesign {
            kind: DesignKind::Optimized,
            target: a,
            coefficients: vec![0.0; order],
            beta,
            epsilon,
            delta,
            achieved_gap: f64::NEG_INFINITY,
        });
    }
    let points = scaled_points(basis, a, delta);

    // Variables: γ_1..γ_r (κ_k = γ_k / Δ^k), then the epigraph level t.
    let mut rows = Vec::with_capacity(3 * points.len());
    let mut rhs = Vec::with_capacity(3 * points.len());
    for &s in &points {
        let mono = monomials(s, order);
        let mut le_t = mono.clone();
        le_t.push(-1.0);
        rows.push(le_t);
        rhs.push(-1.0);
        let mut upper = mono.clone();
        upper.push(0.0);
        rows.push(upper);
        rhs.push(-epsilon);
        let mut lower: Vec<f64> = mono.iter().map(|x| -x).collect();
        lower.push(0.0);
        rows.push(lower);
        rhs.push(1.0 + beta);
    }
    let mut cost = vec![0.0; order];
    cost.push(1.0);
    let sol = lp::minimize(&cost, &rows, &rhs).map_err(|e| match e {
        lp::LpFailure::Infeasible => infeasible("no polynomial meets the bounds".into()),
        other => Error::LinearProgram(format!("{other:?}")),
    })?;

    let coefficients: Vec<f64> = sol.x[..order]
        .iter()
        .enumerate()
        .map(|(k, g)| g / delta.powi(k as i32 + 1))
        .collect();
    let design = PolynomialDesign {
        kind: DesignKind::Optimized,
        target: a,
        coefficients,
        beta,
        epsilon,
        delta,
        achieved_gap: f64::NAN,
    }
    .finish(basis);
    for (i, v) in design.mapped_eigenvalues(basis).iter().enumerate() {
        if i != a && (*v < -beta - CONSTRAINT_TOL || *v > 1.0 - epsilon + CONSTRAINT_TOL) {
            return Err(infeasible(format!(
                "solution violates bounds at harmonic {i} (f = {v})"
            )));
        }
    }
    Ok(design)
}

/// Largest `ε` for which an order-`r` design with lower bound `−β` exists.
pub fn max_feasible_epsilon(
    basis: &SpectralBasis,
    a: usize,
    order: usize,
    beta: f64,
) -> Result<f64> {
    check_target(basis, a)?;
    validate_parameters(order, beta, 0.5)?;
    if basis.dim() == 1 {
        return Ok(1.0);
    }
    let delta = spread(basis, a);
    let points = scaled_points(basis, a, delta);
    // Variables: γ_1..γ_r, e. Maximise e s.t. f(s) ≤ 1 − e, f(s) ≥ −β, e ≤ 1.
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for &s in &points {
        let mono = monomials(s, order);
        let mut upper = mono.clone();
        upper.push(1.0);
        rows.push(upper);
        rhs.push(0.0);
        let mut lower: Vec<f64> = mono.iter().map(|x| -x).collect();
        lower.push(0.0);
        rows.push(lower);
        rhs.push(1.0 + beta);
    }
    let mut cap = vec![0.0; order];
    cap.push(1.0);
    rows.push(cap);
    rhs.push(1.0);
    let mut cost = vec![0.0; order];
    cost.push(-1.0);
    let sol = lp::minimize(&cost, &rows, &rhs)
        .map_err(|e| Error::LinearProgram(format!("margin search: {e:?}")))?;
    Ok(sol.x[order].max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignMethod {
    ClosedForm,
    Optimized,
}

/// How to design the attractor of each harmonic in a pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSpec {
    pub method: DesignMethod,
    pub order: usize,
    pub beta: f64,
    pub epsilon: f64,
    /// When the optimised design is infeasible at `epsilon`, retry at half
    /// the largest feasible margin instead of failing.
    pub auto_epsilon: bool,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            method: DesignMethod::Optimized,
            order: 4,
            beta: DEFAULT_BETA,
            epsilon: DEFAULT_EPSILON,
            auto_epsilon: true,
        }
    }
}

/// Designs the attractor of harmonic `a`; the second value describes any
/// margin adjustment that was made.
pub fn design_with_spec(
    basis: &SpectralBasis,
    a: usize,
    spec: &DesignSpec,
) -> Result<(PolynomialDesign, Option<String>)> {
    match spec.method {
        DesignMethod::ClosedForm => {
            Ok((design_closed_form(basis, a, spec.order, spec.beta)?, None))
        }
        DesignMethod::Optimized => {
            match design_optimized(basis, a, spec.order, spec.beta, spec.epsilon) {
                Err(Error::InfeasibleDesign { .. }) if spec.auto_epsilon => {
                    let margin = max_feasible_epsilon(basis, a, spec.order, spec.beta)?;
                    if !(margin > 0.0) {
                        return Err(Error::InfeasibleDesign {
                            order: spec.order,
                            beta: spec.beta,
                            epsilon: spec.epsilon,
                            msg: "no positive margin is attainable".into(),
                        });
                    }
                    let eps = margin / 2.0;
                    let d = design_optimized(basis, a, spec.order, spec.beta, eps)?;
                    Ok((
                        d,
                        Some(format!(
                            "harmonic {a}: epsilon {} infeasible at order {}, used {eps:e}",
                            spec.epsilon, spec.order
                        )),
                    ))
                }
                other => Ok((other?, None)),
            }
        }
    }
}

fn validate_parameters(order: usize, beta: f64, epsilon: f64) -> Result<()> {
    if order == 0 {
        return Err(Error::Config("polynomial order must be positive".into()));
    }
    if !(beta > -1.0 && beta <= 1.0) {
        return Err(Error::Config(format!(
            "beta must lie in (-1, 1], got {beta}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

fn scaled_points(basis: &SpectralBasis, a: usize, delta: f64) -> Vec<f64> {
    let la = basis.eigenvalue(a);
    basis
        .eigenvalues()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != a)
        .map(|(_, &l)| (l - la) / delta)
        .collect()
}

fn monomials(s: f64, order: usize) -> Vec<f64> {
    (1..=order as i32).map(|k| s.powi(k)).collect()
}

/// Weight-update matrix of a harmonic attractor, with its kernel radius.
#[derive(Debug, Clone)]
pub struct AttractorMatrix {
    pub target: usize,
    pub radius: usize,
    pub eigen_gap: f64,
    pub coefficients: Vec<f64>,
    pub beta: f64,
    pub epsilon: f64,
    pub(crate) matrix: SparseColumns,
}

impl AttractorMatrix {
    /// Wraps a transition matrix as the radius-1 attractor of `π_1`.
    pub fn from_transition(p: &TransitionMatrix, basis: &SpectralBasis) -> Self {
        let gap = 1.0
            - basis
                .eigenvalues()
                .iter()
                .skip(1)
                .fold(0.0f64, |m, l| m.max(l.abs()));
        Self {
            target: 0,
            radius: 1,
            eigen_gap: gap,
            coefficients: vec![1.0],
            beta: 1.0,
            epsilon: 0.0,
            matrix: p.sparse().clone(),
        }
    }

    pub fn matrix(&self) -> &SparseColumns {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }
}

/// Evaluates `f(P − λ_a I)` column by column with Horner's scheme; `r`
/// sparse products per column.
pub fn assemble_matrix(
    p: &TransitionMatrix,
    basis: &SpectralBasis,
    design: &PolynomialDesign,
) -> Result<AttractorMatrix> {
    let n = p.dim();
    if basis.dim() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: basis.dim(),
        });
    }
    check_target(basis, design.target)?;
    let shift = basis.eigenvalue(design.target);
    let sparse = p.sparse();

    let column = |j: usize| -> Vec<(usize, f64)> {
        let mut v = vec![0.0; n];
        let mut next = vec![0.0; n];
        // Horner from the leading coefficient down to the unit constant term.
        let lead = design.coefficients.last().copied().unwrap_or(1.0);
        v[j] = lead;
        let lower = design.coefficients.len().saturating_sub(1);
        for k in (0..lower).rev().map(Some).chain(std::iter::once(None)) {
            if design.coefficients.is_empty() {
                break;
            }
            shifted_product(sparse, shift, &v, &mut next);
            std::mem::swap(&mut v, &mut next);
            v[j] += match k {
                Some(k) => design.coefficients[k],
                None => 1.0,
            };
        }
        v.iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, &x)| (i, x))
            .collect()
    };

    #[cfg(feature = "parallel")]
    let cols: Vec<_> = (0..n).into_par_iter().map(column).collect();
    #[cfg(not(feature = "parallel"))]
    let cols: Vec<_> = (0..n).map(column).collect();

    let matrix = SparseColumns::from_columns(n, cols);
    let mapped = design.mapped_eigenvalues(basis);
    let mut worst = 0.0f64;
    for (i, mu) in mapped.iter().enumerate() {
        let pi = basis.vector(i);
        let mpi = matrix.mul_vec(pi);
        let res = mpi
            .iter()
            .zip(pi)
            .fold(0.0f64, |m, (x, y)| m.max((x - mu * y).abs()));
        worst = worst.max(res);
    }
    if !(worst <= ASSEMBLY_TOL) {
        return Err(Error::Assembly {
            residual: worst,
            limit: ASSEMBLY_TOL,
        });
    }
    Ok(AttractorMatrix {
        target: design.target,
        radius: design.order(),
        eigen_gap: design.eigen_gap(basis),
        coefficients: design.coefficients.clone(),
        beta: design.beta,
        epsilon: design.epsilon,
        matrix,
    })
}

/// `out = (P − shift·I) v`, accumulated in ascending column order.
fn shifted_product(p: &SparseColumns, shift: f64, v: &[f64], out: &mut [f64]) {
    p.mul_vec_into(v, out);
    for (o, x) in out.iter_mut().zip(v) {
        *o -= shift * x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_line_chain, Environment};
    use crate::spectral::{decompose, decompose_dense};

    fn chain(n: usize) -> (TransitionMatrix, SpectralBasis) {
        let p = build_line_chain(n).unwrap();
        let b = decompose(&p).unwrap();
        (p, b)
    }

    #[test]
    fn closed_forms_fix_the_constant_term() {
        let (_, basis) = chain(20);
        for order in [2, 4] {
            let d = design_closed_form(&basis, 4, order, 0.3).unwrap();
            assert_eq!(d.eval(0.0), 1.0);
        }
    }

    #[test]
    fn second_order_vanishes_at_spread_for_zero_beta() {
        let (_, basis) = chain(20);
        let d = design_closed_form(&basis, 4, 2, 0.0).unwrap();
        assert!(d.eval(d.delta).abs() < 1e-15);
        let d = design_closed_form(&basis, 4, 4, 0.0).unwrap();
        // 1 − 3 + 2 = 0 at the spread as well
        assert!(d.eval(d.delta).abs() < 1e-14);
    }

    #[test]
    fn closed_form_rejects_bad_input() {
        let (_, basis) = chain(5);
        assert!(design_closed_form(&basis, 1, 3, 0.0).is_err());
        assert!(design_closed_form(&basis, 1, 2, 1.0).is_err());
        assert!(design_closed_form(&basis, 9, 2, 0.0).is_err());
        let one = decompose_dense(&nalgebra::DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(matches!(
            design_closed_form(&one, 0, 2, 0.0),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn first_order_design_on_five_states() {
        let (_, basis) = chain(5);
        let d = design_first_order_for_pi1(&basis);
        let f2 = d.eval(basis.eigenvalue(1) - 1.0);
        assert!((f2 - basis.eigenvalue(1)).abs() < 1e-15);
        assert!((f2 - 0.77).abs() < 0.005);
        assert_eq!(d.eval(0.0), 1.0);
    }

    #[test]
    fn first_order_design_is_contractive_on_twenty_states() {
        let (_, basis) = chain(20);
        let d = design_first_order_for_pi1(&basis);
        for (i, v) in d.mapped_eigenvalues(&basis).iter().enumerate().skip(1) {
            assert!(v.abs() < 1.0, "harmonic {i}: {v}");
        }
    }

    #[test]
    fn optimized_two_state_chain() {
        let (_, basis) = chain(2);
        let d = design_optimized(&basis, 0, 1, 0.0, 0.01).unwrap();
        assert!((d.coefficients[0] - 0.625).abs() < 1e-12);
        assert!(d.achieved_gap.abs() < 1e-12);
        assert_eq!(d.eval(0.0), 1.0);
    }

    #[test]
    fn optimized_beats_closed_form() {
        let (_, basis) = chain(20);
        let closed = design_closed_form(&basis, 4, 4, 0.0).unwrap();
        let opt = design_optimized(&basis, 4, 4, 0.0, 0.01).unwrap();
        assert!(opt.achieved_gap <= closed.achieved_gap + 1e-12);
        for (i, v) in opt.mapped_eigenvalues(&basis).iter().enumerate() {
            if i != 4 {
                assert!(*v >= -1e-9 && *v <= 0.99 + 1e-9);
            }
        }
    }

    #[test]
    fn infeasible_design_is_reported() {
        // second harmonic of the 20-chain needs a smaller margin at order 4
        let (_, basis) = chain(20);
        match design_optimized(&basis, 1, 4, 0.0, 0.01) {
            Err(Error::InfeasibleDesign { order: 4, .. }) => {}
            other => panic!("expected infeasible design, got {other:?}"),
        }
        let margin = max_feasible_epsilon(&basis, 1, 4, 0.0).unwrap();
        assert!(margin > 0.0 && margin < 0.01);
        assert!(design_optimized(&basis, 1, 4, 0.0, margin * 0.5).is_ok());
    }

    #[test]
    fn parameter_validation() {
        let (_, basis) = chain(5);
        assert!(design_optimized(&basis, 0, 0, 0.0, 0.01).is_err());
        assert!(design_optimized(&basis, 0, 2, -1.0, 0.01).is_err());
        assert!(design_optimized(&basis, 0, 2, 0.0, 0.0).is_err());
    }

    #[test]
    fn first_order_assembly_reproduces_p() {
        let (p, basis) = chain(20);
        let d = design_first_order_for_pi1(&basis);
        let m = assemble_matrix(&p, &basis, &d).unwrap();
        let diff = (m.matrix().to_dense() - p.to_dense()).amax();
        assert!(diff < 1e-14);
        assert_eq!(m.radius, 1);
    }

    #[test]
    fn fourth_order_attractor_is_banded_and_maps_spectrum() {
        let (p, basis) = chain(20);
        let d = design_closed_form(&basis, 4, 4, 0.7).unwrap();
        let m = assemble_matrix(&p, &basis, &d).unwrap();
        assert_eq!(m.radius, 4);
        let mut widest = 0;
        for j in 0..20 {
            for &(i, _) in m.matrix().column(j) {
                widest = widest.max(i.abs_diff(j));
            }
        }
        assert_eq!(widest, 4);
        let mapped = d.mapped_eigenvalues(&basis);
        for i in 0..20 {
            let pi = basis.vector(i);
            let mpi = m.matrix().mul_vec(pi);
            for (x, y) in mpi.iter().zip(pi) {
                assert!((x - mapped[i] * y).abs() < 1e-8);
            }
        }
        let pa = basis.vector(4);
        let mpa = m.matrix().mul_vec(pa);
        assert!(mpa.iter().zip(pa).all(|(x, y)| (x - y).abs() < 1e-8));
    }

    #[test]
    fn grid_attractor_respects_hop_radius() {
        let env = Environment::parse("grid 5 6\n......\n.#....\n......\n....#.\n......\n").unwrap();
        let p = crate::env::build_grid_chain(&env).unwrap();
        let basis = decompose(&p).unwrap();
        let margin = max_feasible_epsilon(&basis, 3, 2, 0.0).unwrap();
        let d = design_optimized(&basis, 3, 2, 0.0, margin * 0.5).unwrap();
        let m = assemble_matrix(&p, &basis, &d).unwrap();
        let hops = env.hop_matrix();
        for j in 0..env.len() {
            for &(i, _) in m.matrix().column(j) {
                assert!(hops[i][j] <= 2);
            }
        }
    }
}
