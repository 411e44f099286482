use harmonic_swarm::attractor::{
    assemble_matrix, design_closed_form, design_optimized, extract_kernels, parse_kernel_table,
    write_kernel_table, AttractorMatrix,
};
use harmonic_swarm::dynamics::{project_coefficient, ProjectionMode};
use harmonic_swarm::env::{build_chain, Environment};
use harmonic_swarm::shape::{decompose_shape, rescale, select_harmonics, TargetShape};
use harmonic_swarm::spectral::{decompose, SpectralBasis};
use harmonic_swarm::swarm::{
    aggregate_with, average_in_cells, step_unweighted, Execution, Proposal, SwarmConfig,
    SwarmState, WeightedStepper,
};
use proptest::prelude::*;

fn grid_from_mask(rows: usize, cols: usize, mask: &[bool]) -> Option<Environment> {
    Environment::grid(rows, cols, mask.to_vec()).ok()
}

fn small_env() -> impl Strategy<Value = Environment> {
    prop_oneof![
        (2usize..30).prop_map(|n| Environment::line(n).unwrap()),
        (1usize..7, 1usize..7)
            .prop_flat_map(|(r, c)| (
                Just(r),
                Just(c),
                proptest::collection::vec(prop::bool::weighted(0.2), r * c)
            ))
            .prop_filter_map("disconnected or empty", |(r, c, m)| grid_from_mask(
                r, c, &m
            )),
    ]
}

/// Environments whose chain has a real, diagonalisable spectrum.
fn spectral_env() -> impl Strategy<Value = (Environment, SpectralBasis)> {
    prop_oneof![
        (2usize..25).prop_map(|n| Environment::line(n).unwrap()),
        (2usize..6, 2usize..6).prop_map(|(r, c)| Environment::open_grid(r, c).unwrap()),
    ]
    .prop_filter_map("no real basis", |env| {
        let basis = decompose(&build_chain(&env).ok()?).ok()?;
        Some((env, basis))
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chains_are_column_stochastic_and_conserve_mass(env in small_env(), seed in any::<u64>()) {
        let p = build_chain(&env).unwrap();
        for (j, s) in p.sparse().column_sums().iter().enumerate() {
            prop_assert!((s - 1.0).abs() < 1e-12, "column {j} sums to {s}");
        }
        prop_assert!(p.sparse().columns().flatten().all(|&(_, v)| v >= 0.0));
        let mut state = seed;
        let v: Vec<f64> = (0..env.len())
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let total: f64 = v.iter().sum();
        let next: f64 = p.mul_vec(&v).iter().sum();
        prop_assert!((total - next).abs() <= 1e-12 * total.max(1.0));
    }

    #[test]
    fn full_basis_round_trip((env, basis) in spectral_env(), bits in proptest::collection::vec(any::<bool>(), 36)) {
        let n = env.len();
        let w: Vec<f64> = (0..n).map(|i| if bits[i % bits.len()] { 1.0 } else { 0.0 }).collect();
        prop_assume!(w.iter().any(|&x| x != 0.0));
        let shape = TargetShape::new(w.clone()).unwrap();
        let c = decompose_shape(&shape, &basis).unwrap();
        let back = basis.reconstruct(&c);
        for (a, b) in back.iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_never_grows_with_more_harmonics((env, basis) in spectral_env(), bits in proptest::collection::vec(any::<bool>(), 36)) {
        let n = env.len();
        let w: Vec<f64> = (0..n).map(|i| if bits[i % bits.len()] { 1.0 } else { 0.0 }).collect();
        prop_assume!(w.iter().any(|&x| x != 0.0));
        let shape = TargetShape::new(w).unwrap();
        let c = decompose_shape(&shape, &basis).unwrap();
        // Reversible chains have harmonics orthogonal under 1/π_1 weights, so
        // that residual can only shrink as terms are added.
        let pi1 = harmonic_swarm::spectral::steady_state(&basis);
        let weighted = |k: usize| {
            let plan = select_harmonics(&c, &basis, &shape, k).unwrap();
            plan.approximation
                .iter()
                .zip(&shape.w_des)
                .zip(&pi1)
                .map(|((a, b), p)| (a - b) * (a - b) / p)
                .sum::<f64>()
        };
        let mut prev = f64::INFINITY;
        for k in 1..=n {
            let r = weighted(k);
            prop_assert!(r <= prev * (1.0 + 1e-9) + 1e-12, "k={k}: {r} > {prev}");
            prev = r;
        }
        prop_assert!(prev < 1e-12);
    }

    #[test]
    fn kernel_tables_rebuild_the_matrix((env, basis) in spectral_env(), pick in any::<prop::sample::Index>(), order in prop::sample::select(vec![2usize, 4])) {
        let p = build_chain(&env).unwrap();
        let a = pick.index(env.len());
        let Ok(d) = design_closed_form(&basis, a, order, 0.5) else { return Ok(()) };
        let m = assemble_matrix(&p, &basis, &d).unwrap();
        let table = extract_kernels(&env, &m).unwrap();
        prop_assert_eq!(&table.to_matrix(&env).unwrap(), m.matrix());
        let text = write_kernel_table(&table, &env);
        let parsed = parse_kernel_table(&text, &env).unwrap();
        prop_assert_eq!(&parsed, &table);
    }

    #[test]
    fn attractors_conserve_the_left_projection((env, basis) in spectral_env(), pick in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let p = build_chain(&env).unwrap();
        let a = pick.index(env.len());
        let Ok(d) = design_closed_form(&basis, a, 4, 0.3) else { return Ok(()) };
        let m = assemble_matrix(&p, &basis, &d).unwrap();
        let mut v: Vec<f64> = (0..env.len()).map(|i| ((seed >> (i % 60)) & 7) as f64 - 3.0).collect();
        v[0] += 1.0;
        let c0 = project_coefficient(&v, &basis, a, ProjectionMode::Exact).unwrap();
        let scale = v.iter().map(|x| x.abs()).sum::<f64>();
        for _ in 0..50 {
            v = m.matrix().mul_vec(&v);
        }
        let c = project_coefficient(&v, &basis, a, ProjectionMode::Exact).unwrap();
        prop_assert!((c - c0).abs() <= 1e-9 * scale.max(1.0));
    }

    #[test]
    fn rescale_is_idempotent((env, basis) in spectral_env(), pick in any::<prop::sample::Index>(), c in -3.0f64..3.0, noise in 0.0f64..0.2) {
        prop_assume!(c.abs() > 1e-3);
        let a = pick.index(env.len());
        let w: Vec<f64> = basis.vector(a).iter().enumerate().map(|(i, x)| 7.0 * x + noise * ((i % 3) as f64 - 1.0)).collect();
        prop_assume!(dot(&w, basis.vector(a)).abs() > 1e-3);
        let (once, _) = rescale(&w, &basis, a, c, 1e-9).unwrap();
        let (twice, s) = rescale(&once, &basis, a, c, 1e-9).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
        for (x, y) in once.iter().zip(&twice) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn execution_modes_agree_bit_for_bit(robots in 1usize..12_000, seed in any::<u64>(), steps in 1usize..6) {
        let env = Environment::line(9).unwrap();
        let p = build_chain(&env).unwrap();
        let basis = decompose(&p).unwrap();
        let cfg = SwarmConfig::new(robots, seed, 4);
        let mut seq = SwarmState::unweighted(&cfg, 9).unwrap();
        let mut par = seq.clone();
        for _ in 0..steps {
            step_unweighted(&mut seq, &p, seed, Execution::Sequential).unwrap();
            step_unweighted(&mut par, &p, seed, Execution::Parallel).unwrap();
        }
        prop_assert_eq!(&seq, &par);
        let counts = aggregate_with(&seq, 9, Execution::Sequential).counts;
        prop_assert_eq!(counts.iter().sum::<usize>(), robots);

        let m = AttractorMatrix::from_transition(&p, &basis);
        let kernels = extract_kernels(&env, &m).unwrap().scaled(9.0);
        for proposal in [Proposal::Uniform, Proposal::KernelSupport] {
            let stepper = WeightedStepper::new(&kernels, &env, proposal).unwrap();
            let mut seq = SwarmState::weighted(&cfg, 9).unwrap();
            let mut par = seq.clone();
            for _ in 0..steps {
                stepper.step(&mut seq, seed, Execution::Sequential).unwrap();
                stepper.step(&mut par, seed, Execution::Parallel).unwrap();
            }
            prop_assert_eq!(&seq, &par);
            let a = aggregate_with(&seq, 9, Execution::Sequential);
            let b = aggregate_with(&par, 9, Execution::Parallel);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn averaging_keeps_cell_totals(positions in proptest::collection::vec(0usize..6, 1..300), weights in proptest::collection::vec(-2.0f64..2.0, 300)) {
        let mut state = SwarmState { weights: weights[..positions.len()].to_vec(), positions, t: 0 };
        let before = aggregate_with(&state, 6, Execution::Sequential);
        average_in_cells(&mut state, 6, Execution::Sequential);
        let after = aggregate_with(&state, 6, Execution::Sequential);
        prop_assert_eq!(&before.counts, &after.counts);
        for (x, y) in before.weights.iter().zip(&after.weights) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for (k, &p) in state.positions.iter().enumerate() {
            let same = state.positions.iter().position(|&q| q == p).unwrap();
            prop_assert_eq!(state.weights[k], state.weights[same]);
        }
    }
}

/// The distance to the limit falls at least as fast as the second-largest
/// mapped eigenvalue allows, up to the basis condition number.
#[test]
fn attractor_error_decays_geometrically() {
    let env = Environment::line(20).unwrap();
    let p = build_chain(&env).unwrap();
    let basis = decompose(&p).unwrap();
    for a in [0, 4, 11] {
        let d = design_optimized(&basis, a, 4, 0.0, 1e-2).unwrap();
        let rho = d
            .mapped_eigenvalues(&basis)
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != a)
            .fold(0.0f64, |m, (_, mu)| m.max(mu.abs()));
        let m = assemble_matrix(&p, &basis, &d).unwrap();
        let mut v = vec![0.0; 20];
        v[0] = 1.0;
        let c = project_coefficient(&v, &basis, a, ProjectionMode::Exact).unwrap();
        let limit: Vec<f64> = basis.vector(a).iter().map(|x| c * x).collect();
        let err = |v: &[f64]| {
            v.iter()
                .zip(&limit)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let e0 = err(&v);
        let bound = basis.condition_number();
        for t in 1..=300 {
            v = m.matrix().mul_vec(&v);
            let e = err(&v);
            // plus a round-off floor once the error is down near 1e-12
            assert!(
                e <= bound * rho.powi(t) * e0 + 1e-11,
                "harmonic {a}, t {t}: error {e:e} above {:e}",
                bound * rho.powi(t) * e0
            );
        }
    }
}

/// Mean aggregated weight after one step matches the exact update cell by
/// cell (unweighted oracle: multinomial expectation).
#[test]
fn unweighted_step_matches_transition_in_expectation() {
    let env = Environment::line(6).unwrap();
    let p = build_chain(&env).unwrap();
    let seeds = 300u64;
    let robots = 500;
    let mut mean = [0.0; 6];
    for seed in 0..seeds {
        let cfg = SwarmConfig::new(robots, seed, 2);
        let mut s = SwarmState::unweighted(&cfg, 6).unwrap();
        step_unweighted(&mut s, &p, seed, Execution::Sequential).unwrap();
        let d = aggregate_with(&s, 6, Execution::Sequential).distribution();
        for i in 0..6 {
            mean[i] += d[i] / seeds as f64;
        }
    }
    let exact = p.mul_vec(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    for i in 0..6 {
        let se = (exact[i] * (1.0 - exact[i]) / (robots as f64 * seeds as f64)).sqrt();
        assert!(
            (mean[i] - exact[i]).abs() <= 4.0 * se + 1e-15,
            "cell {i}: {} vs {}",
            mean[i],
            exact[i]
        );
    }
}
