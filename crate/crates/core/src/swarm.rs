//! Monte-Carlo robot swarms.
//!
//! Unweighted robots walk the chain `P`. Weighted robots follow the
//! individual-robot algorithm: jump to a uniformly chosen cell, multiply the
//! carried weight by the kernel entry for that displacement, then average
//! with everybody else who landed on the same cell.
//!
//! Every random draw of robot `k` at step `t` comes from its own generator
//! seeded by `(seed, k, t)`, and per-cell sums are reduced over fixed-size
//! chunks in a fixed order. Results are therefore bit-identical for any
//! thread count and either execution mode.

use std::io::Write;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::attractor::KernelTable;
use crate::env::{Environment, TransitionMatrix};
use crate::error::{Error, Result};

/// Robots per reduction chunk.
pub const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Data-parallel over robots; falls back to sequential when the crate is
    /// built without the `parallel` feature.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Proposal {
    /// Destination drawn uniformly from all `n` cells.
    #[default]
    Uniform,
    /// Destination drawn from the kernel support in proportion to `|k_δ|`,
    /// with the weight corrected so the expectation is unchanged. Lower
    /// variance; not part of the original algorithm.
    KernelSupport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmConfig {
    pub robots: usize,
    pub seed: u64,
    pub start_cell: usize,
    pub initial_weight: f64,
    pub proposal: Proposal,
    pub execution: Execution,
}

impl SwarmConfig {
    pub fn new(robots: usize, seed: u64, start_cell: usize) -> Self {
        Self {
            robots,
            seed,
            start_cell,
            initial_weight: 1.0,
            proposal: Proposal::Uniform,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub positions: Vec<usize>,
    /// Empty for unweighted swarms.
    pub weights: Vec<f64>,
    pub t: usize,
}

impl SwarmState {
    pub fn unweighted(config: &SwarmConfig, n: usize) -> Result<Self> {
        Self::check(config, n)?;
        Ok(Self {
            positions: vec![config.start_cell; config.robots],
            weights: Vec::new(),
            t: 0,
        })
    }

    pub fn weighted(config: &SwarmConfig, n: usize) -> Result<Self> {
        Self::check(config, n)?;
        Ok(Self {
            positions: vec![config.start_cell; config.robots],
            weights: vec![config.initial_weight; config.robots],
            t: 0,
        })
    }

    fn check(config: &SwarmConfig, n: usize) -> Result<()> {
        if config.robots == 0 {
            return Err(Error::Config("a swarm needs at least one robot".into()));
        }
        if config.start_cell >= n {
            return Err(Error::Config(format!(
                "start cell {} outside {n} cells",
                config.start_cell
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_weighted(&self) -> bool {
        !self.weights.is_empty()
    }
}

/// Per-cell totals.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedWeights {
    /// Sum of carried weights per cell; robot counts for unweighted swarms.
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
}

impl AggregatedWeights {
    /// Counts divided by the number of robots.
    pub fn distribution(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }
}

/// Seed of the generator used by `robot` at step `t`.
pub fn stream_seed(seed: u64, robot: u64, t: u64) -> u64 {
    let mut z = seed
        ^ robot.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ t.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(29);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for an independent swarm (e.g. one per harmonic).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    stream_seed(seed, u64::MAX - stream, u64::MAX)
}

fn robot_rng(seed: u64, robot: usize, t: usize) -> SmallRng {
    SmallRng::seed_from_u64(stream_seed(seed, robot as u64, t as u64))
}

fn for_each_robot<F>(exec: Execution, positions: &mut [usize], weights: &mut [f64], f: F)
where
    F: Fn(usize, &mut usize, Option<&mut f64>) + Sync + Send,
{
    let weighted = !weights.is_empty();
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            if weighted {
                positions
                    .par_iter_mut()
                    .zip(weights.par_iter_mut())
                    .enumerate()
                    .for_each(|(k, (p, w))| f(k, p, Some(w)));
            } else {
                positions
                    .par_iter_mut()
                    .enumerate()
                    .for_each(|(k, p)| f(k, p, None));
            }
        }
        _ => {
            if weighted {
                positions
                    .iter_mut()
                    .zip(weights.iter_mut())
                    .enumerate()
                    .for_each(|(k, (p, w))| f(k, p, Some(w)));
            } else {
                positions
                    .iter_mut()
                    .enumerate()
                    .for_each(|(k, p)| f(k, p, None));
            }
        }
    }
}

/// Draws from a column given as sorted `(row, probability)` pairs.
fn sample_column(col: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(i, p) in col {
        acc += p;
        if u < acc {
            return i;
        }
    }
    col.last().expect("stochastic column is non-empty").0
}

/// One move of every robot along `P`.
pub fn step_unweighted(
    state: &mut SwarmState,
    p: &TransitionMatrix,
    seed: u64,
    exec: Execution,
) -> Result<()> {
    let n = p.dim();
    if let Some(&bad) = state.positions.iter().find(|&&c| c >= n) {
        return Err(Error::InvalidDimension(format!(
            "robot on cell {bad} of {n}"
        )));
    }
    let t = state.t;
    let sparse = p.sparse();
    for_each_robot(exec, &mut state.positions, &mut [], |k, pos, _| {
        let u: f64 = robot_rng(seed, k, t).random();
        *pos = sample_column(sparse.column(*pos), u);
    });
    state.t += 1;
    Ok(())
}

/// Per-cell proposal over the kernel support: destinations, cumulative
/// probabilities and the weight factor for each.
struct SupportTable {
    cells: Vec<Vec<(usize, f64, f64)>>,
}

impl SupportTable {
    fn new(kernels: &KernelTable, env: &Environment) -> Result<Self> {
        let cells = (0..env.len())
            .map(|j| {
                let (r, c) = env.coord(j);
                let k = kernels.kernel_for(j);
                let mass: f64 = k.entries().iter().map(|(_, v)| v.abs()).sum();
                let mut acc = 0.0;
                k.entries()
                    .iter()
                    .filter(|(_, v)| *v != 0.0)
                    .map(|&((dr, dc), v)| {
                        let rr = r as isize + dr;
                        let cc = c as isize + dc;
                        let dest = (rr >= 0 && cc >= 0)
                            .then(|| env.index_of(rr as usize, cc as usize))
                            .flatten()
                            .ok_or_else(|| {
                                Error::KernelExtraction(format!(
                                    "kernel of ({r}, {c}) reaches a blocked cell"
                                ))
                            })?;
                        acc += v.abs() / mass;
                        // q = |k| / mass, target mean k / n  ⇒  factor = sign(k) mass / n
                        let factor = v.signum() * mass / kernels.scale;
                        Ok((dest, acc, factor))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cells })
    }

    fn draw(&self, cell: usize, u: f64) -> (usize, f64) {
        let row = &self.cells[cell];
        match row.iter().find(|&&(_, acc, _)| u < acc).or(row.last()) {
            Some(&(dest, _, factor)) => (dest, factor),
            // empty kernel: the weight is annihilated wherever the robot goes
            None => (cell, 0.0),
        }
    }
}

/// Weighted-robot stepper bound to one kernel table.
pub struct WeightedStepper<'a> {
    kernels: &'a KernelTable,
    env: &'a Environment,
    support: Option<SupportTable>,
}

impl<'a> WeightedStepper<'a> {
    /// `kernels` must hold the weight matrix `W = n·M`, i.e. a table scaled
    /// by the number of cells.
    pub fn new(kernels: &'a KernelTable, env: &'a Environment, proposal: Proposal) -> Result<Self> {
        let n = env.len();
        if kernels.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: kernels.len(),
            });
        }
        if kernels.scale != n as f64 {
            return Err(Error::Config(format!(
                "weighted robots need kernels scaled by n = {n}, got scale {}",
                kernels.scale
            )));
        }
        let support = match proposal {
            Proposal::Uniform => None,
            Proposal::KernelSupport => Some(SupportTable::new(kernels, env)?),
        };
        Ok(Self {
            kernels,
            env,
            support,
        })
    }

    /// Move, multiply and average.
    pub fn step(&self, state: &mut SwarmState, seed: u64, exec: Execution) -> Result<()> {
        self.move_and_multiply(state, seed, exec)?;
        average_in_cells(state, self.env.len(), exec);
        Ok(())
    }

    /// Move and multiply only, without the averaging pass.
    pub fn move_and_multiply(
        &self,
        state: &mut SwarmState,
        seed: u64,
        exec: Execution,
    ) -> Result<()> {
        let n = self.env.len();
        if !state.is_weighted() {
            return Err(Error::Config("weighted step on an unweighted swarm".into()));
        }
        if let Some(&bad) = state.positions.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidDimension(format!(
                "robot on cell {bad} of {n}"
            )));
        }
        let t = state.t;
        let (kernels, env) = (self.kernels, self.env);
        match &self.support {
            None => for_each_robot(
                exec,
                &mut state.positions,
                &mut state.weights,
                |k, pos, w| {
                    let dest = robot_rng(seed, k, t).random_range(0..n);
                    let kd = kernels.kernel_for(*pos).get(env.offset(*pos, dest));
                    let w = w.expect("weighted");
                    *w *= kd;
                    *pos = dest;
                },
            ),
            Some(table) => for_each_robot(
                exec,
                &mut state.positions,
                &mut state.weights,
                |k, pos, w| {
                    let u: f64 = robot_rng(seed, k, t).random();
                    let (dest, factor) = table.draw(*pos, u);
                    let w = w.expect("weighted");
                    *w *= factor;
                    *pos = dest;
                },
            ),
        }
        state.t += 1;
        Ok(())
    }
}

/// Convenience wrapper around [`WeightedStepper`] with the uniform proposal.
pub fn step_weighted(
    state: &mut SwarmState,
    kernels: &KernelTable,
    env: &Environment,
    seed: u64,
    exec: Execution,
) -> Result<()> {
    WeightedStepper::new(kernels, env, Proposal::Uniform)?.step(state, seed, exec)
}

/// Replaces every weight by the mean weight of its cell.
pub fn average_in_cells(state: &mut SwarmState, n: usize, exec: Execution) {
    let agg = aggregate_with(state, n, exec);
    let mean: Vec<f64> = agg
        .weights
        .iter()
        .zip(&agg.counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let positions = &state.positions;
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => state
            .weights
            .par_iter_mut()
            .zip(positions.par_iter())
            .for_each(|(w, &p)| *w = mean[p]),
        _ => state
            .weights
            .iter_mut()
            .zip(positions)
            .for_each(|(w, &p)| *w = mean[p]),
    }
}

/// Per-cell sums and counts.
pub fn aggregate(state: &SwarmState, n: usize) -> AggregatedWeights {
    aggregate_with(state, n, Execution::default())
}

pub fn aggregate_with(state: &SwarmState, n: usize, exec: Execution) -> AggregatedWeights {
    let weighted = state.is_weighted();
    let partial = |chunk: usize| -> (Vec<f64>, Vec<usize>) {
        let lo = chunk * CHUNK;
        let hi = (lo + CHUNK).min(state.len());
        let mut w = vec![0.0; n];
        let mut c = vec![0usize; n];
        for k in lo..hi {
            let p = state.positions[k];
            c[p] += 1;
            w[p] += if weighted { state.weights[k] } else { 1.0 };
        }
        (w, c)
    };
    let chunks = state.len().div_ceil(CHUNK);
    let parts: Vec<(Vec<f64>, Vec<usize>)> = match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..chunks).into_par_iter().map(partial).collect(),
        _ => (0..chunks).map(partial).collect(),
    };
    let (weights, counts) = pairwise(parts).unwrap_or_else(|| (vec![0.0; n], vec![0; n]));
    AggregatedWeights { weights, counts }
}

/// Fixed-shape pairwise tree: level by level, neighbours `2i` and `2i+1`.
fn pairwise(mut parts: Vec<(Vec<f64>, Vec<usize>)>) -> Option<(Vec<f64>, Vec<usize>)> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some((mut w, mut c)) = it.next() {
            if let Some((w2, c2)) = it.next() {
                w.iter_mut().zip(&w2).for_each(|(a, b)| *a += b);
                c.iter_mut().zip(&c2).for_each(|(a, b)| *a += b);
            }
            next.push((w, c));
        }
        parts = next;
    }
    parts.pop()
}

/// Writes `t,cell,robot_count,weight_sum` rows; `header` controls the
/// first line so several snapshots can share one file.
pub fn write_snapshot_csv(
    out: &mut impl Write,
    t: usize,
    agg: &AggregatedWeights,
    header: bool,
) -> Result<()> {
    if header {
        writeln!(out, "t,cell,robot_count,weight_sum")?;
    }
    for (cell, (w, c)) in agg.weights.iter().zip(&agg.counts).enumerate() {
        writeln!(out, "{t},{cell},{c},{w:.16e}")?;
    }
    Ok(())
}

/// Per-robot dump: `t,robot,cell,weight`.
pub fn write_robots_csv(out: &mut impl Write, state: &SwarmState, header: bool) -> Result<()> {
    if header {
        writeln!(out, "t,robot,cell,weight")?;
    }
    for (k, &p) in state.positions.iter().enumerate() {
        let w = state.weights.get(k).copied().unwrap_or(1.0);
        writeln!(out, "{},{k},{p},{w:.16e}", state.t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attractor::{extract_kernels, AttractorMatrix};
    use crate::env::build_line_chain;
    use crate::sparse::SparseColumns;
    use crate::spectral::decompose;

    fn weight_table(n: usize) -> (Environment, KernelTable) {
        let env = Environment::line(n).unwrap();
        let p = build_line_chain(n).unwrap();
        let basis = decompose(&p).unwrap();
        let m = AttractorMatrix::from_transition(&p, &basis);
        let t = extract_kernels(&env, &m).unwrap().scaled(n as f64);
        (env, t)
    }

    #[test]
    fn identity_chain_keeps_robots_in_place() {
        let p = TransitionMatrix::new(SparseColumns::identity(4));
        let cfg = SwarmConfig::new(50, 3, 2);
        let mut s = SwarmState::unweighted(&cfg, 4).unwrap();
        step_unweighted(&mut s, &p, 3, Execution::Sequential).unwrap();
        assert!(s.positions.iter().all(|&c| c == 2));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn aggregate_sums_weights_per_cell() {
        let s = SwarmState {
            positions: vec![1, 1, 0],
            weights: vec![0.2, 0.4, 1.0],
            t: 0,
        };
        let a = aggregate(&s, 3);
        assert!((a.weights[1] - 0.6).abs() < 1e-15);
        assert_eq!(a.counts, vec![1, 2, 0]);
        let cfg = SwarmConfig::new(7, 0, 2);
        let a = aggregate(&SwarmState::weighted(&cfg, 3).unwrap(), 3);
        assert_eq!(a.weights, vec![0.0, 0.0, 7.0]);
    }

    #[test]
    fn averaging_equalises_cellmates() {
        let mut s = SwarmState {
            positions: vec![1, 1, 0, 1],
            weights: vec![0.2, 0.4, 1.0, 0.0],
            t: 0,
        };
        average_in_cells(&mut s, 3, Execution::Sequential);
        assert_eq!(s.weights[0], s.weights[1]);
        assert_eq!(s.weights[1], s.weights[3]);
        assert!((s.weights[0] - 0.2).abs() < 1e-15);
        assert_eq!(s.weights[2], 1.0);
    }

    #[test]
    fn lone_robot_outside_radius_loses_its_weight() {
        let (env, t) = weight_table(20);
        let cfg = SwarmConfig::new(1, 11, 0);
        let mut s = SwarmState::weighted(&cfg, 20).unwrap();
        let stepper = WeightedStepper::new(&t, &env, Proposal::Uniform).unwrap();
        // find a seed whose first jump leaves the radius
        let seed = (0..1000u64)
            .find(|&sd| robot_rng(sd, 0, 0).random_range(0..20usize) > 1)
            .unwrap();
        stepper.step(&mut s, seed, Execution::Sequential).unwrap();
        assert_eq!(s.weights[0], 0.0);
        for _ in 0..5 {
            stepper.step(&mut s, seed, Execution::Sequential).unwrap();
            assert_eq!(s.weights[0], 0.0);
        }
    }

    #[test]
    fn unscaled_kernels_are_rejected() {
        let (env, t) = weight_table(5);
        assert!(WeightedStepper::new(&t.scaled(0.2), &env, Proposal::Uniform).is_err());
    }

    #[test]
    fn execution_modes_agree_bitwise() {
        let (env, t) = weight_table(10);
        let cfg = SwarmConfig::new(3 * CHUNK + 17, 5, 0);
        let run = |exec| {
            let mut s = SwarmState::weighted(&cfg, 10).unwrap();
            let stepper = WeightedStepper::new(&t, &env, Proposal::Uniform).unwrap();
            for _ in 0..8 {
                stepper.step(&mut s, cfg.seed, exec).unwrap();
            }
            (s.clone(), aggregate_with(&s, 10, exec))
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn unweighted_first_step_fractions() {
        let p = build_line_chain(5).unwrap();
        let cfg = SwarmConfig::new(20_000, 17, 0);
        let mut s = SwarmState::unweighted(&cfg, 5).unwrap();
        step_unweighted(&mut s, &p, cfg.seed, Execution::Parallel).unwrap();
        let d = aggregate(&s, 5).distribution();
        let sigma = (0.2f64 * 0.8 / 20_000.0).sqrt();
        assert!((d[0] - 0.2).abs() < 4.0 * sigma);
        assert!((d[1] - 0.8).abs() < 4.0 * sigma);
        assert_eq!(d[2] + d[3] + d[4], 0.0);
    }

    #[test]
    fn importance_proposal_is_unbiased_in_one_step() {
        let (env, t) = weight_table(6);
        let stepper = WeightedStepper::new(&t, &env, Proposal::KernelSupport).unwrap();
        let cfg = SwarmConfig::new(4000, 0, 2);
        let mut mean = vec![0.0; 6];
        let seeds = 50;
        for sd in 0..seeds {
            let mut s = SwarmState::weighted(&cfg, 6).unwrap();
            stepper.step(&mut s, sd, Execution::Sequential).unwrap();
            let a = aggregate(&s, 6);
            for (m, w) in mean.iter_mut().zip(&a.weights) {
                *m += w / 4000.0 / seeds as f64;
            }
        }
        // column 2 of the 6-chain
        let expect = [0.0, 0.4, 0.2, 0.4, 0.0, 0.0];
        for (m, e) in mean.iter().zip(expect) {
            assert!((m - e).abs() < 5e-3, "{mean:?}");
        }
    }

    #[test]
    fn derived_streams_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(stream_seed(1, 2, 3), stream_seed(1, 3, 2));
    }
}
