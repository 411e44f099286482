use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::{MatrixChoice, Mode, Scenario, StartCell};
use super::render::{render_ascii, render_pgm};
use crate::attractor::{
    assemble_matrix, design_first_order_for_pi1, design_with_spec, extract_kernels,
    write_kernel_table, AttractorMatrix, DesignSpec, KernelTable,
};
use crate::dynamics::{iterate, project_coefficient, write_trajectory_csv, ProjectionMode};
use crate::env::{build_chain, EnvKind, Environment, TransitionMatrix};
use crate::error::{Error, Result};
use crate::shape::{
    default_threshold, reconstruct, Engine, PipelineConfig, Selection, TargetShape,
    DEFAULT_DISSIPATION_FLOOR,
};
use crate::spectral::{decompose, dot, steady_state, SpectralBasis};
use crate::swarm::{
    aggregate_with, step_unweighted, write_robots_csv, write_snapshot_csv, SwarmConfig, SwarmState,
    WeightedStepper,
};

/// What a finished run reports besides its files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    /// Some iteration stopped at its step limit.
    pub partial: bool,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

struct Out<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Out<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, bytes)?;
        self.files.push(p);
        Ok(())
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let p = self.dir.join(name);
        let f = fs::File::create(&p)?;
        self.files.push(p);
        Ok(BufWriter::new(f))
    }

    fn field(&mut self, stem: &str, v: &[f64], env: &Environment) -> Result<()> {
        self.write(&format!("{stem}.txt"), render_ascii(v, env)?.as_bytes())?;
        let (pgm, side) = render_pgm(v, env)?;
        self.write(&format!("{stem}.pgm"), &pgm)?;
        self.write(&format!("{stem}.pgm.txt"), side.as_bytes())
    }
}

fn resolve_start(start: StartCell, env: &Environment) -> Result<usize> {
    match start {
        StartCell::Index(k) if (1..=env.len()).contains(&k) => Ok(k - 1),
        StartCell::Index(k) => Err(Error::Config(format!(
            "start cell {k} outside 1..={}",
            env.len()
        ))),
        StartCell::Coord(r, c) => env
            .index_of(r, c)
            .ok_or_else(|| Error::Config(format!("start ({r}, {c}) is not a free cell"))),
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = dot(a, a).sqrt() * dot(b, b).sqrt();
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

fn design_spec(s: &Scenario) -> DesignSpec {
    DesignSpec {
        method: s.method,
        order: s.order,
        beta: s.beta,
        epsilon: s.epsilon,
        auto_epsilon: s.auto_epsilon,
    }
}

/// Weight-update matrix for the scenario's harmonic.
fn update_matrix(
    s: &Scenario,
    p: &TransitionMatrix,
    basis: &SpectralBasis,
    warnings: &mut Vec<String>,
) -> Result<AttractorMatrix> {
    let a = s.harmonic - 1;
    if a >= basis.dim() {
        return Err(Error::Config(format!(
            "harmonic {} outside 1..={}",
            s.harmonic,
            basis.dim()
        )));
    }
    match s.matrix {
        MatrixChoice::Transition => {
            if a != 0 {
                return Err(Error::Config(
                    "the transition matrix only attracts harmonic 1".into(),
                ));
            }
            Ok(AttractorMatrix::from_transition(p, basis))
        }
        MatrixChoice::Attractor if s.first_order => {
            if a != 0 {
                return Err(Error::Config(
                    "first-order designs exist only for harmonic 1".into(),
                ));
            }
            assemble_matrix(p, basis, &design_first_order_for_pi1(basis))
        }
        MatrixChoice::Attractor => {
            let (d, note) = design_with_spec(basis, a, &design_spec(s))?;
            warnings.extend(note);
            assemble_matrix(p, basis, &d)
        }
    }
}

/// Runs one scenario, writing everything under `out_dir`.
pub fn run_scenario(s: &Scenario, out_dir: &Path, meta: &[(&str, String)]) -> Result<Outcome> {
    s.validate()?;
    let env_text = s.environment.read()?;
    let env = Environment::parse(&env_text)?;
    let start = resolve_start(s.start, &env)?;
    let shape_text = s.shape.as_ref().map(|src| src.read()).transpose()?;

    fs::create_dir_all(out_dir)?;
    let mut out = Out {
        dir: out_dir,
        files: Vec::new(),
    };
    out.write("env.txt", env.to_string().as_bytes())?;
    if let Some(t) = &shape_text {
        out.write("shape.txt", t.as_bytes())?;
    }
    let mut meta = meta.to_vec();
    meta.insert(0, ("version", env!("CARGO_PKG_VERSION").to_owned()));
    out.write(
        "manifest.txt",
        s.to_manifest("env.txt", shape_text.as_ref().map(|_| "shape.txt"), &meta)
            .as_bytes(),
    )?;

    let mut outcome = Outcome::default();
    let p = build_chain(&env)?;
    let mut summary = String::new();
    match s.mode {
        Mode::Eigen => run_eigen(s, &env, &p, &mut out, &mut summary)?,
        Mode::Dynamics => run_dynamics(s, &env, &p, start, &mut out, &mut summary, &mut outcome)?,
        Mode::SwarmUnweighted => run_unweighted(s, &env, &p, start, &mut out, &mut summary)?,
        Mode::SwarmWeighted => {
            if s.exact {
                run_dynamics(s, &env, &p, start, &mut out, &mut summary, &mut outcome)?
            } else {
                run_weighted(s, &env, &p, start, &mut out, &mut summary, &mut outcome)?
            }
        }
        Mode::Reconstruct => {
            let shape = TargetShape::from_overlay(&env, shape_text.as_deref().unwrap_or(""))?;
            run_reconstruct(s, &env, &shape, start, &mut out, &mut summary, &mut outcome)?
        }
    }
    for w in &outcome.warnings {
        let _ = writeln!(summary, "warning: {w}");
    }
    out.write("summary.txt", summary.as_bytes())?;
    outcome.files = out.files;
    Ok(outcome)
}

fn run_eigen(
    s: &Scenario,
    env: &Environment,
    p: &TransitionMatrix,
    out: &mut Out,
    summary: &mut String,
) -> Result<()> {
    let basis = decompose(p)?;
    let n = basis.dim();
    let mut csv = out.create("eigen.csv")?;
    write!(csv, "harmonic,eigenvalue")?;
    for i in 1..=n {
        write!(csv, ",x{i}")?;
    }
    writeln!(csv)?;
    for i in 0..n {
        write!(csv, "{},{:.16e}", i + 1, basis.eigenvalue(i))?;
        for x in basis.harmonic(i, s.normalization) {
            write!(csv, ",{x:.16e}")?;
        }
        writeln!(csv)?;
    }
    csv.flush()?;
    let _ = writeln!(summary, "cells {n}");
    let _ = writeln!(summary, "condition {:.4e}", basis.condition_number());
    for i in 0..n.min(10) {
        let _ = writeln!(summary, "lambda_{} {:.4}", i + 1, basis.eigenvalue(i));
    }
    let _ = writeln!(
        summary,
        "pi_1 {}",
        steady_state(&basis)
            .iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    if env.kind() == EnvKind::Grid2D {
        for i in 0..n.min(4) {
            out.field(&format!("harmonic_{}", i + 1), basis.vector(i), env)?;
        }
    }
    Ok(())
}

fn run_dynamics(
    s: &Scenario,
    env: &Environment,
    p: &TransitionMatrix,
    start: usize,
    out: &mut Out,
    summary: &mut String,
    outcome: &mut Outcome,
) -> Result<()> {
    let basis = decompose(p)?;
    let m = update_matrix(s, p, &basis, &mut outcome.warnings)?;
    let kernels = extract_kernels(env, &m)?;
    out.write("kernels.txt", write_kernel_table(&kernels, env).as_bytes())?;
    let n = env.len();
    let a = s.harmonic - 1;
    let mut v0 = vec![0.0; n];
    // swarm modes under the exact flag start from the expected aggregate
    v0[start] = if s.mode == Mode::Dynamics {
        1.0
    } else {
        s.robots as f64
    };
    let snapshots: Vec<usize> = if s.mode == Mode::Dynamics {
        s.snapshots.clone()
    } else {
        (0..=s.steps).step_by(s.stride).collect()
    };
    let label = format!("M{}", s.harmonic);
    let t = iterate(&label, m.matrix(), &v0, &s.crit, &snapshots)?;
    let mut csv = out.create("trajectory.csv")?;
    write_trajectory_csv(&t, &mut csv)?;
    csv.flush()?;

    let last = t.limit.as_ref().unwrap_or(&t.last);
    let _ = writeln!(summary, "matrix {label} radius {}", m.radius);
    let _ = writeln!(summary, "eigen_gap {:.4e}", m.eigen_gap);
    let _ = writeln!(summary, "steps {}", t.steps);
    match t.converged_at {
        Some(c) => {
            let _ = writeln!(summary, "converged_at {c}");
        }
        None => {
            outcome.partial = true;
            outcome
                .warnings
                .push(format!("no convergence within {} steps", s.crit.max_steps));
        }
    }
    let _ = writeln!(
        summary,
        "cosine_to_harmonic {:.10}",
        cosine(last, basis.vector(a))
    );
    let _ = writeln!(
        summary,
        "coefficient_exact {:.6e}",
        project_coefficient(&v0, &basis, a, ProjectionMode::Exact)?
    );
    let _ = writeln!(
        summary,
        "coefficient_dot {:.6e}",
        project_coefficient(&v0, &basis, a, ProjectionMode::DotProduct)?
    );
    if env.kind() == EnvKind::Grid2D {
        out.field("final", last, env)?;
    }
    Ok(())
}

fn snapshot_due(s: &Scenario, t: usize) -> bool {
    t.is_multiple_of(s.stride) || t == s.steps
}

fn run_unweighted(
    s: &Scenario,
    env: &Environment,
    p: &TransitionMatrix,
    start: usize,
    out: &mut Out,
    summary: &mut String,
) -> Result<()> {
    let n = env.len();
    let cfg = SwarmConfig::new(s.robots, s.seed, start);
    let mut state = SwarmState::unweighted(&cfg, n)?;
    let mut csv = out.create("snapshots.csv")?;
    let mut dump = if s.robot_dump {
        Some(out.create("robots.csv")?)
    } else {
        None
    };
    let mut agg = aggregate_with(&state, n, s.execution);
    write_snapshot_csv(&mut csv, 0, &agg, true)?;
    if let Some(d) = dump.as_mut() {
        write_robots_csv(d, &state, true)?;
    }
    while state.t < s.steps {
        step_unweighted(&mut state, p, s.seed, s.execution)?;
        if snapshot_due(s, state.t) {
            agg = aggregate_with(&state, n, s.execution);
            write_snapshot_csv(&mut csv, state.t, &agg, false)?;
            if let Some(d) = dump.as_mut() {
                write_robots_csv(d, &state, false)?;
            }
        }
    }
    csv.flush()?;
    if let Some(mut d) = dump {
        d.flush()?;
    }
    let basis = decompose(p)?;
    let pi = steady_state(&basis);
    let dist = agg.distribution();
    let l1: f64 = dist.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
    let _ = writeln!(summary, "robots {} steps {}", s.robots, s.steps);
    let _ = writeln!(summary, "l1_to_steady_state {l1:.4e}");
    if env.kind() == EnvKind::Grid2D {
        out.field("final", &dist, env)?;
    }
    Ok(())
}

fn run_weighted(
    s: &Scenario,
    env: &Environment,
    p: &TransitionMatrix,
    start: usize,
    out: &mut Out,
    summary: &mut String,
    outcome: &mut Outcome,
) -> Result<()> {
    let n = env.len();
    let basis = decompose(p)?;
    let m = update_matrix(s, p, &basis, &mut outcome.warnings)?;
    let kernels: KernelTable = extract_kernels(env, &m)?.scaled(n as f64);
    out.write("kernels.txt", write_kernel_table(&kernels, env).as_bytes())?;
    let stepper = WeightedStepper::new(&kernels, env, s.proposal)?;
    let cfg = SwarmConfig::new(s.robots, s.seed, start);
    let mut state = SwarmState::weighted(&cfg, n)?;
    let mut csv = out.create("snapshots.csv")?;
    let mut dump = if s.robot_dump {
        Some(out.create("robots.csv")?)
    } else {
        None
    };
    let mut agg = aggregate_with(&state, n, s.execution);
    write_snapshot_csv(&mut csv, 0, &agg, true)?;
    if let Some(d) = dump.as_mut() {
        write_robots_csv(d, &state, true)?;
    }
    while state.t < s.steps {
        stepper.step(&mut state, s.seed, s.execution)?;
        if snapshot_due(s, state.t) {
            agg = aggregate_with(&state, n, s.execution);
            write_snapshot_csv(&mut csv, state.t, &agg, false)?;
            if let Some(d) = dump.as_mut() {
                write_robots_csv(d, &state, false)?;
            }
        }
    }
    csv.flush()?;
    if let Some(mut d) = dump {
        d.flush()?;
    }
    let a = s.harmonic - 1;
    let _ = writeln!(summary, "robots {} steps {}", s.robots, s.steps);
    let _ = writeln!(
        summary,
        "cosine_to_harmonic {:.6}",
        cosine(&agg.weights, basis.vector(a))
    );
    if env.kind() == EnvKind::Grid2D {
        out.field("final", &agg.weights, env)?;
    }
    Ok(())
}

fn run_reconstruct(
    s: &Scenario,
    env: &Environment,
    shape: &TargetShape,
    start: usize,
    out: &mut Out,
    summary: &mut String,
    outcome: &mut Outcome,
) -> Result<()> {
    let selection = match (s.count, s.percentile) {
        (Some(c), _) => Selection::Count(c),
        (None, Some(p)) => Selection::Percentile(p),
        (None, None) => Selection::Percentile(0.25),
    };
    let engine = if s.exact {
        Engine::Exact { crit: s.crit }
    } else {
        Engine::Particles {
            robots: s.robots,
            seed: s.seed,
            crit: crate::dynamics::ConvergenceCriterion {
                max_steps: s.steps,
                ..s.crit
            },
            proposal: s.proposal,
            execution: s.execution,
        }
    };
    let cfg = PipelineConfig {
        selection,
        start_cell: start,
        design: design_spec(s),
        engine,
        threshold: s.threshold,
        dissipation_floor: DEFAULT_DISSIPATION_FLOOR,
    };
    let r = reconstruct(env, shape, &cfg)?;
    let plan = r.plan.as_ref().expect("pipeline returns its plan");
    outcome.warnings.extend(r.warnings.iter().cloned());
    if r.runs.iter().any(|run| !run.converged) {
        outcome.partial = true;
    }

    let mut csv = out.create("plan.csv")?;
    writeln!(
        csv,
        "rank,harmonic,coefficient,initial_weight,rescale_factor,coefficient_exact,steps,converged"
    )?;
    for (k, run) in r.runs.iter().enumerate() {
        writeln!(
            csv,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            k + 1,
            run.harmonic + 1,
            run.coefficient,
            run.initial_weight,
            r.rescale_factors[k],
            r.exact_coefficients[k],
            run.steps,
            run.converged
        )?;
    }
    csv.flush()?;

    let support = shape.support();
    let tau_approx = s
        .threshold
        .unwrap_or_else(|| default_threshold(&plan.approximation, &support));
    let direct: Vec<bool> = plan.approximation.iter().map(|&x| x > tau_approx).collect();

    let mut csv = out.create("total.csv")?;
    writeln!(csv, "cell,row,col,target,approximation,total,occupied")?;
    for i in 0..env.len() {
        let (row, col) = env.coord(i);
        writeln!(
            csv,
            "{},{row},{col},{:.16e},{:.16e},{:.16e},{}",
            i + 1,
            shape.w_des[i],
            plan.approximation[i],
            r.total[i],
            u8::from(r.occupied[i])
        )?;
    }
    csv.flush()?;
    out.write("occupied.txt", env.overlay_text(&r.occupied)?.as_bytes())?;
    out.write("approximation.txt", env.overlay_text(&direct)?.as_bytes())?;
    out.field("total", &r.total, env)?;

    let target_miss = r
        .occupied
        .iter()
        .zip(&support)
        .filter(|(a, b)| a != b)
        .count();
    let oracle_miss = r
        .occupied
        .iter()
        .zip(&direct)
        .filter(|(a, b)| a != b)
        .count();
    let _ = writeln!(summary, "harmonics {}", plan.count());
    let _ = writeln!(summary, "residual_l2 {:.4e}", plan.residual_l2);
    let _ = writeln!(summary, "threshold {:.4e}", r.threshold);
    let _ = writeln!(summary, "cells_differing_from_target {target_miss}");
    let _ = writeln!(summary, "cells_differing_from_approximation {oracle_miss}");
    Ok(())
}
