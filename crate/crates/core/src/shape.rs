//! Shape construction: write a target as a sum of harmonics, grow each
//! retained harmonic with its own swarm, rescale, add up and threshold.

use nalgebra::DVector;

use crate::attractor::{
    assemble_matrix, design_with_spec, extract_kernels, DesignSpec, KernelTable,
};
use crate::dynamics::{self, iterate, ConvergenceCriterion, ProjectionMode};
use crate::env::{build_chain, Environment};
use crate::error::{Error, Result};
use crate::spectral::{decompose, dot, SpectralBasis};
use crate::swarm::{
    aggregate_with, derive_seed, Execution, Proposal, SwarmConfig, SwarmState, WeightedStepper,
};

/// Decomposition fails above this condition number of the harmonic basis.
pub const MAX_CONDITION: f64 = 1e10;
/// `|π_s|` below this makes `s` a nodal start cell.
pub const NODAL_TOL: f64 = 1e-9;
/// Default floor on the cosine between `w̄` and `π` before rescaling is
/// declared hopeless.
pub const DEFAULT_DISSIPATION_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetShape {
    /// Indicator (or any real field) over free cells.
    pub w_des: Vec<f64>,
}

impl TargetShape {
    pub fn new(w_des: Vec<f64>) -> Result<Self> {
        if !w_des.iter().any(|&x| x != 0.0) {
            return Err(Error::Degenerate("target shape is empty".into()));
        }
        Ok(Self { w_des })
    }

    pub fn from_overlay(env: &Environment, text: &str) -> Result<Self> {
        Self::new(env.parse_overlay(text)?)
    }

    pub fn support(&self) -> Vec<bool> {
        self.w_des.iter().map(|&x| x != 0.0).collect()
    }
}

/// Coefficients `c` with `Σ c_i π_i = w_des` for the L2-normalised
/// harmonics, by one dense solve.
pub fn decompose_shape(shape: &TargetShape, basis: &SpectralBasis) -> Result<Vec<f64>> {
    let n = basis.dim();
    if shape.w_des.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: shape.w_des.len(),
        });
    }
    let cond = basis.condition_number();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditionedBasis(cond));
    }
    let v = basis.right_matrix();
    let rhs = DVector::from_column_slice(&shape.w_des);
    let c = v
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::IllConditionedBasis(f64::INFINITY))?;
    let residual = (&v * &c - &rhs).norm();
    if !(residual < 1e-8 * rhs.norm().max(1.0)) {
        return Err(Error::IllConditionedBasis(cond));
    }
    Ok(c.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicPlan {
    /// `(harmonic, coefficient)` by decreasing `|c|`.
    pub selected: Vec<(usize, f64)>,
    /// Requested fraction of the basis, if selection was by percentile.
    pub percentile: Option<f64>,
    pub approximation: Vec<f64>,
    pub residual_l2: f64,
}

impl HarmonicPlan {
    pub fn count(&self) -> usize {
        self.selected.len()
    }
}

/// `⌈n p⌉`, guarded against `n p` landing a hair above an integer.
pub fn percentile_count(n: usize, p: f64) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "percentile must lie in (0, 1], got {p}"
        )));
    }
    Ok(((n as f64 * p - 1e-9).ceil() as usize).clamp(1, n))
}

/// Keeps the `count` harmonics with the largest `|c|`, lower index first on
/// ties.
pub fn select_harmonics(
    c: &[f64],
    basis: &SpectralBasis,
    shape: &TargetShape,
    count: usize,
) -> Result<HarmonicPlan> {
    let n = c.len();
    if basis.dim() != n || shape.w_des.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: basis.dim().min(shape.w_des.len()),
        });
    }
    if count == 0 || count > n {
        return Err(Error::Config(format!(
            "harmonic count {count} outside 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| c[j].abs().total_cmp(&c[i].abs()).then(i.cmp(&j)));
    let selected: Vec<(usize, f64)> = order[..count].iter().map(|&i| (i, c[i])).collect();
    let approximation = superpose_harmonics(basis, &selected);
    let residual_l2 = approximation
        .iter()
        .zip(&shape.w_des)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(HarmonicPlan {
        selected,
        percentile: None,
        approximation,
        residual_l2,
    })
}

pub fn select_by_percentile(
    c: &[f64],
    basis: &SpectralBasis,
    shape: &TargetShape,
    p: f64,
) -> Result<HarmonicPlan> {
    let mut plan = select_harmonics(c, basis, shape, percentile_count(c.len(), p)?)?;
    plan.percentile = Some(p);
    Ok(plan)
}

fn superpose_harmonics(basis: &SpectralBasis, selected: &[(usize, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; basis.dim()];
    for &(i, c) in selected {
        for (o, x) in out.iter_mut().zip(basis.vector(i)) {
            *o += c * x;
        }
    }
    out
}

/// `c ‖π‖² / (N π_s)` for any scaling of `π`.
pub fn initial_weight_for(
    pi: &[f64],
    c: f64,
    robots: usize,
    start: usize,
    harmonic: usize,
) -> Result<f64> {
    if start >= pi.len() {
        return Err(Error::Config(format!(
            "start cell {start} outside {} cells",
            pi.len()
        )));
    }
    if robots == 0 {
        return Err(Error::Config("a swarm needs at least one robot".into()));
    }
    let ps = pi[start];
    if ps.abs() < NODAL_TOL {
        return Err(Error::NodalStart {
            cell: start,
            harmonic,
            value: ps,
        });
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    Ok(c * dot(pi, pi) / (robots as f64 * ps))
}

/// Per-robot starting weight for harmonic `a`, against the stored
/// L2-normalised `π_a`.
pub fn initial_weights(
    a: usize,
    c: f64,
    basis: &SpectralBasis,
    robots: usize,
    start: usize,
) -> Result<f64> {
    initial_weight_for(basis.vector(a), c, robots, start, a)
}

/// How each harmonic swarm is run.
#[derive(Debug, Clone, PartialEq)]
pub enum Engine {
    /// Infinite-swarm limit computed from the weight matrix itself.
    Exact { crit: ConvergenceCriterion },
    Particles {
        robots: usize,
        seed: u64,
        crit: ConvergenceCriterion,
        proposal: Proposal,
        execution: Execution,
    },
}

impl Engine {
    fn robots(&self) -> usize {
        match self {
            Engine::Exact { .. } => 1,
            Engine::Particles { robots, .. } => *robots,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicRun {
    pub harmonic: usize,
    pub coefficient: f64,
    pub initial_weight: f64,
    /// Aggregated weights at the end of the run.
    pub weights: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
    /// Last relative change of the normalised field.
    pub residual: f64,
}

/// Runs the swarm of one plan entry with the kernels of its attractor.
///
/// `kernels` holds `M_a` itself (scale 1). The exact engine rebuilds the
/// matrix; particles use `n·M_a`. Non-convergence is reported in the
/// result rather than as an error.
pub fn run_harmonic_swarm(
    entry: (usize, f64),
    env: &Environment,
    basis: &SpectralBasis,
    kernels: &KernelTable,
    start: usize,
    engine: &Engine,
) -> Result<HarmonicRun> {
    let (a, c) = entry;
    let n = env.len();
    if kernels.target != a {
        return Err(Error::Config(format!(
            "kernels attract harmonic {}, plan entry asks for {a}",
            kernels.target
        )));
    }
    if kernels.scale != 1.0 {
        return Err(Error::Config(
            "harmonic swarms expect unscaled kernels".into(),
        ));
    }
    let robots = engine.robots();
    let w0 = initial_weights(a, c, basis, robots, start)?;

    match engine {
        Engine::Exact { crit } => {
            let m = kernels.to_matrix(env)?;
            let mut v0 = vec![0.0; n];
            v0[start] = w0 * robots as f64;
            let contraction = contraction(basis, kernels);
            let plain_enough = contraction.powf(crit.max_steps as f64) < crit.tolerance;
            if plain_enough {
                let t = iterate(&format!("M{a}"), &m, &v0, crit, &[])?;
                let last = t.last.clone();
                let next = m.mul_vec(&last);
                Ok(HarmonicRun {
                    harmonic: a,
                    coefficient: c,
                    initial_weight: w0,
                    residual: dynamics::relative_change(&last, &next, 0.0),
                    weights: last,
                    steps: t.steps,
                    converged: t.converged_at.is_some(),
                })
            } else {
                let limit =
                    dynamics::limit_by_squaring(&m, &v0, contraction, crit.tolerance * 1e-3)?;
                let next = m.mul_vec(&limit);
                let residual = dynamics::relative_change(&limit, &next, 0.0);
                Ok(HarmonicRun {
                    harmonic: a,
                    coefficient: c,
                    initial_weight: w0,
                    weights: limit,
                    steps: 0,
                    converged: residual < crit.tolerance,
                    residual,
                })
            }
        }
        Engine::Particles {
            robots,
            seed,
            crit,
            proposal,
            execution,
        } => {
            crit.validate()?;
            let scaled = kernels.scaled(n as f64);
            let stepper = WeightedStepper::new(&scaled, env, *proposal)?;
            let mut cfg = SwarmConfig::new(*robots, derive_seed(*seed, a as u64), start);
            cfg.initial_weight = w0;
            let mut state = SwarmState::weighted(&cfg, n)?;
            let mut prev = normalized(&aggregate_with(&state, n, *execution).weights);
            let mut quiet = 0;
            let mut residual = f64::INFINITY;
            let mut converged = false;
            let mut weights = Vec::new();
            while state.t < crit.max_steps {
                stepper.step(&mut state, cfg.seed, *execution)?;
                weights = aggregate_with(&state, n, *execution).weights;
                let now = normalized(&weights);
                residual = dynamics::relative_change(&prev, &now, 0.0);
                prev = now;
                quiet = if residual < crit.tolerance {
                    quiet + 1
                } else {
                    0
                };
                if quiet >= crit.window {
                    converged = true;
                    break;
                }
            }
            Ok(HarmonicRun {
                harmonic: a,
                coefficient: c,
                initial_weight: w0,
                weights,
                steps: state.t,
                converged,
                residual,
            })
        }
    }
}

/// `max_{i≠a} |f(λ_i − λ_a)|` from the coefficients stored with the kernels.
fn contraction(basis: &SpectralBasis, kernels: &KernelTable) -> f64 {
    let la = basis.eigenvalue(kernels.target);
    basis
        .eigenvalues()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != kernels.target)
        .map(|(_, &l)| {
            let u = l - la;
            let f = kernels
                .coefficients
                .iter()
                .rev()
                .fold(0.0, |acc, &k| (acc + k) * u)
                + 1.0;
            f.abs()
        })
        .fold(0.0, f64::max)
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().map(|x| x.abs()).sum();
    if s == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / s).collect()
    }
}

/// `s·w̄` with `s = c ‖π‖² / (w̄ · π)`; the zero vector when `c = 0`.
///
/// Fails with a dissipation error when `w̄` is zero or its cosine with `π`
/// is at most `floor` in magnitude.
pub fn rescale(
    w: &[f64],
    basis: &SpectralBasis,
    a: usize,
    c: f64,
    floor: f64,
) -> Result<(Vec<f64>, f64)> {
    if w.len() != basis.dim() {
        return Err(Error::ShapeMismatch {
            expected: basis.dim(),
            got: w.len(),
        });
    }
    if c == 0.0 {
        return Ok((vec![0.0; w.len()], 0.0));
    }
    let pi = basis.vector(a);
    let proj = dot(w, pi);
    let scale = dot(w, w).sqrt() * dot(pi, pi).sqrt();
    if !(scale > 0.0 && proj.abs() > floor * scale) {
        return Err(Error::Dissipation {
            harmonic: a,
            projection: proj,
        });
    }
    let s = c * dot(pi, pi) / proj;
    Ok((w.iter().map(|x| s * x).collect(), s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub plan: Option<HarmonicPlan>,
    pub runs: Vec<HarmonicRun>,
    pub rescaled: Vec<Vec<f64>>,
    pub rescale_factors: Vec<f64>,
    /// Exact-mode projection of each rescaled field, for diagnostics.
    pub exact_coefficients: Vec<f64>,
    pub total: Vec<f64>,
    pub threshold: f64,
    pub occupied: Vec<bool>,
    pub warnings: Vec<String>,
}

/// `0.5 ×` the mean of `total` over `support`.
pub fn default_threshold(total: &[f64], support: &[bool]) -> f64 {
    let (s, k) = total
        .iter()
        .zip(support)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, k), (x, _)| (s + x, k + 1));
    if k == 0 {
        0.0
    } else {
        0.5 * s / k as f64
    }
}

/// Sums the fields and marks cells strictly above `tau`.
pub fn superpose_and_threshold(
    results: &[Vec<f64>],
    n: usize,
    tau: f64,
) -> Result<ReconstructionResult> {
    let mut total = vec![0.0; n];
    for r in results {
        if r.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: r.len(),
            });
        }
        for (t, x) in total.iter_mut().zip(r) {
            *t += x;
        }
    }
    let occupied = total.iter().map(|&x| x > tau).collect();
    Ok(ReconstructionResult {
        plan: None,
        runs: Vec::new(),
        rescaled: results.to_vec(),
        rescale_factors: Vec::new(),
        exact_coefficients: Vec::new(),
        total,
        threshold: tau,
        occupied,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    Count(usize),
    Percentile(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub selection: Selection,
    pub start_cell: usize,
    pub design: DesignSpec,
    pub engine: Engine,
    /// `None` picks [`default_threshold`] over the target support.
    pub threshold: Option<f64>,
    pub dissipation_floor: f64,
}

/// The whole construction for one target shape.
pub fn reconstruct(
    env: &Environment,
    shape: &TargetShape,
    cfg: &PipelineConfig,
) -> Result<ReconstructionResult> {
    let p = build_chain(env)?;
    let basis = decompose(&p)?;
    let c = decompose_shape(shape, &basis)?;
    let plan = match cfg.selection {
        Selection::Count(k) => select_harmonics(&c, &basis, shape, k)?,
        Selection::Percentile(q) => select_by_percentile(&c, &basis, shape, q)?,
    };
    let mut warnings = Vec::new();
    let mut runs = Vec::with_capacity(plan.count());
    let mut rescaled = Vec::with_capacity(plan.count());
    let mut factors = Vec::with_capacity(plan.count());
    let mut exact = Vec::with_capacity(plan.count());
    for &(a, ca) in &plan.selected {
        let (design, note) = design_with_spec(&basis, a, &cfg.design)?;
        warnings.extend(note);
        let m = assemble_matrix(&p, &basis, &design)?;
        let kernels = extract_kernels(env, &m)?;
        let run = run_harmonic_swarm((a, ca), env, &basis, &kernels, cfg.start_cell, &cfg.engine)?;
        if !run.converged {
            warnings.push(format!(
                "harmonic {a}: not converged after {} steps (residual {:e})",
                run.steps, run.residual
            ));
        }
        let (w, s) = rescale(&run.weights, &basis, a, ca, cfg.dissipation_floor)?;
        exact.push(if ca == 0.0 {
            0.0
        } else {
            dynamics::project_coefficient(&w, &basis, a, ProjectionMode::Exact)?
        });
        rescaled.push(w);
        factors.push(s);
        runs.push(run);
    }
    let n = env.len();
    let support = shape.support();
    let tau = match cfg.threshold {
        Some(t) => t,
        None => {
            let mut total = vec![0.0; n];
            for w in &rescaled {
                total.iter_mut().zip(w).for_each(|(t, x)| *t += x);
            }
            default_threshold(&total, &support)
        }
    };
    let mut result = superpose_and_threshold(&rescaled, n, tau)?;
    result.plan = Some(plan);
    result.runs = runs;
    result.rescale_factors = factors;
    result.exact_coefficients = exact;
    result.warnings = warnings;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::build_line_chain;
    use crate::spectral::NormalizationMode;

    fn line_basis(n: usize) -> SpectralBasis {
        decompose(&build_line_chain(n).unwrap()).unwrap()
    }

    #[test]
    fn single_harmonic_decomposes_to_unit_vector() {
        let basis = line_basis(8);
        let shape = TargetShape::new(basis.vector(2).to_vec()).unwrap();
        let c = decompose_shape(&shape, &basis).unwrap();
        for (i, x) in c.iter().enumerate() {
            let e = if i == 2 { 1.0 } else { 0.0 };
            assert!((x - e).abs() < 1e-8);
        }
    }

    #[test]
    fn decomposition_is_linear() {
        let basis = line_basis(8);
        let w: Vec<f64> = basis
            .vector(0)
            .iter()
            .zip(basis.vector(3))
            .map(|(a, b)| 0.5 * a + 0.2 * b)
            .collect();
        let c = decompose_shape(&TargetShape::new(w).unwrap(), &basis).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-8 && (c[3] - 0.2).abs() < 1e-8);
        assert!(c
            .iter()
            .enumerate()
            .all(|(i, x)| i == 0 || i == 3 || x.abs() < 1e-8));
    }

    #[test]
    fn full_selection_has_no_residual() {
        let basis = line_basis(10);
        let shape = TargetShape::new((0..10).map(|i| f64::from(i % 3 == 0)).collect()).unwrap();
        let c = decompose_shape(&shape, &basis).unwrap();
        let plan = select_by_percentile(&c, &basis, &shape, 1.0).unwrap();
        assert_eq!(plan.count(), 10);
        assert!(plan.residual_l2 < 1e-8);
    }

    #[test]
    fn percentile_counts() {
        assert_eq!(percentile_count(95, 24.0 / 95.0).unwrap(), 24);
        assert_eq!(percentile_count(120, 29.0 / 120.0).unwrap(), 29);
        assert_eq!(percentile_count(10, 0.25).unwrap(), 3);
        assert!(percentile_count(10, 0.0).is_err());
    }

    #[test]
    fn ties_go_to_the_lower_index() {
        let basis = line_basis(4);
        let shape = TargetShape::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let plan = select_harmonics(&[0.5, -1.0, 1.0, 0.1], &basis, &shape, 2).unwrap();
        assert_eq!(plan.selected, vec![(1, -1.0), (2, 1.0)]);
    }

    #[test]
    fn initial_weight_formula() {
        assert_eq!(
            initial_weight_for(&[0.5, 0.5, 0.5, 0.5], 2.0, 1, 0, 0).unwrap(),
            4.0
        );
        assert_eq!(initial_weight_for(&[0.5, 0.5], 0.0, 10, 1, 0).unwrap(), 0.0);
        assert!(matches!(
            initial_weight_for(&[0.0, 1.0], 1.0, 1, 0, 3),
            Err(Error::NodalStart {
                cell: 0,
                harmonic: 3,
                ..
            })
        ));
    }

    #[test]
    fn initial_aggregate_projects_to_target() {
        let basis = line_basis(5);
        let pi = basis.harmonic(4, NormalizationMode::L1);
        let n_robots = 1000;
        let w = initial_weight_for(&pi, 1.0, n_robots, 0, 4).unwrap();
        let mut agg = vec![0.0; 5];
        agg[0] = w * n_robots as f64;
        assert!((dot(&agg, &pi) - dot(&pi, &pi)).abs() < 1e-15);
    }

    #[test]
    fn rescale_restores_sign_and_size() {
        let basis = line_basis(6);
        let pi = basis.vector(3);
        let c = 0.7;
        let flipped: Vec<f64> = pi.iter().map(|x| -0.5 * c * x).collect();
        let (w, s) = rescale(&flipped, &basis, 3, c, 1e-9).unwrap();
        assert!((s + 2.0).abs() < 1e-12);
        for (x, y) in w.iter().zip(pi) {
            assert!((x - c * y).abs() < 1e-12);
        }
        let (again, _) = rescale(&w, &basis, 3, c, 1e-9).unwrap();
        for (x, y) in again.iter().zip(&w) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(
            rescale(&[0.0; 6], &basis, 3, c, 1e-12),
            Err(Error::Dissipation { .. })
        ));
        assert_eq!(
            rescale(&[0.0; 6], &basis, 3, 0.0, 1e-12).unwrap().0,
            vec![0.0; 6]
        );
    }

    #[test]
    fn empty_superposition() {
        let r = superpose_and_threshold(&[], 4, 0.5).unwrap();
        assert_eq!(r.total, vec![0.0; 4]);
        assert!(r.occupied.iter().all(|&o| !o));
        assert!(superpose_and_threshold(&[vec![1.0; 3]], 4, 0.5).is_err());
    }

    #[test]
    fn exact_pipeline_reproduces_line_shape() {
        let env = Environment::line(12).unwrap();
        let target: Vec<f64> = (0..12).map(|i| f64::from((3..7).contains(&i))).collect();
        let shape = TargetShape::new(target.clone()).unwrap();
        let cfg = PipelineConfig {
            selection: Selection::Percentile(1.0),
            start_cell: 0,
            design: DesignSpec::default(),
            engine: Engine::Exact {
                crit: ConvergenceCriterion::default(),
            },
            threshold: Some(0.5),
            dissipation_floor: DEFAULT_DISSIPATION_FLOOR,
        };
        let r = reconstruct(&env, &shape, &cfg).unwrap();
        for (t, w) in r.total.iter().zip(&target) {
            assert!((t - w).abs() < 1e-6, "{t} vs {w}");
        }
        assert_eq!(r.occupied, shape.support());
    }
}
