//! Randomized invariants of the discretization.

use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sizepop::adjoint::{duality_residual, solve_adjoint, solve_sensitivity};
use sizepop::forward::{solve_state, StateOperator};
use sizepop::presets;
use sizepop::{Axes, Field, Grid3, ValidatedScenario};

fn random_case(seed: u64, ns: usize, nt: usize, nx: usize) -> (ValidatedScenario, Field, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Grid3::new(ns, nt, nx, 1.0, 1.0, 1.0).unwrap();
    let sc = presets::random(g, &mut rng).validate().unwrap();
    let beta = Field::from_fn(g, Axes::CONTROL, |_, _, _| rng.gen_range(0.0..2.0));
    (sc, beta, rng)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn abs_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y).abs()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn state_stays_nonnegative(seed in 0u64..1_000_000, ns in 2usize..10, nt in 2usize..8, nx in 1usize..6) {
        let (sc, beta, _) = random_case(seed, ns, nt, nx);
        let st = solve_state(&sc, &beta).unwrap();
        prop_assert!(st.p.min() >= 0.0, "min p = {}", st.p.min());
        prop_assert!(st.total_population.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn transposed_step_matches(seed in 0u64..1_000_000, ns in 2usize..10, nt in 2usize..6, nx in 1usize..6) {
        let (sc, beta, mut rng) = random_case(seed, ns, nt, nx);
        let op = StateOperator::new(&sc).unwrap();
        let n = ns * nx;
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for j in 0..nt {
            let au = op.step_linear(j, &u, &beta);
            let atv = op.step_transpose(j, &v, &beta).0;
            let scale = abs_dot(&au, &v).max(abs_dot(&u, &atv)).max(1e-300);
            prop_assert!((dot(&au, &v) - dot(&u, &atv)).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn sensitivity_duality(seed in 0u64..1_000_000, ns in 2usize..8, nt in 2usize..6, nx in 1usize..5) {
        let (sc, beta, mut rng) = random_case(seed, ns, nt, nx);
        let st = solve_state(&sc, &beta).unwrap();
        let adj = solve_adjoint(&sc, &beta, &st).unwrap();
        let delta = Field::from_fn(sc.grid, Axes::CONTROL, |_, _, _| rng.gen_range(-1.0..1.0));
        let z = solve_sensitivity(&sc, &beta, &st, &delta).unwrap();
        prop_assert!(duality_residual(&sc, &st, &adj, &z, &delta).unwrap() < 1e-10);

        let doubled = delta.map(|d| 2.0 * d);
        let z2 = solve_sensitivity(&sc, &beta, &st, &doubled).unwrap();
        let scale = z.z.sup_norm().max(1e-300);
        prop_assert!(z2.z.max_abs_diff(&z.z.map(|v| 2.0 * v)).unwrap() <= 1e-13 * scale);
    }

    #[test]
    fn solves_are_reproducible(seed in 0u64..1_000_000) {
        let (sc, beta, _) = random_case(seed, 5, 4, 3);
        let a = solve_state(&sc, &beta).unwrap();
        let b = solve_state(&sc, &beta).unwrap();
        prop_assert_eq!(a.p.values(), b.p.values());
        let pa = solve_adjoint(&sc, &beta, &a).unwrap();
        let pb = solve_adjoint(&sc, &beta, &b).unwrap();
        prop_assert_eq!(pa.phi.values(), pb.phi.values());
    }
}

/// Averages a fine state onto the coarse grid: pairs of size cells, every
/// second time node.
fn restrict(fine: &Field, coarse: Grid3) -> Field {
    Field::from_fn(coarse, Axes::STATE, |i, j, k| {
        0.5 * (fine.get(2 * i, 2 * j, k) + fine.get(2 * i + 1, 2 * j, k))
    })
}

fn l1(a: &Field, b: &Field) -> f64 {
    let g = a.grid();
    let mut acc = 0.0;
    for i in 0..g.ns {
        for j in 0..g.n_times() {
            for k in 0..g.nx {
                acc += g.wt(j) * g.ds() * g.wx(k) * (a.get(i, j, k) - b.get(i, j, k)).abs();
            }
        }
    }
    acc
}

#[test]
fn first_order_grid_convergence() {
    let grids: Vec<Grid3> = [20, 40, 80].iter().map(|&n| Grid3::unit(n, n, 4)).collect();
    let states: Vec<Field> = grids
        .iter()
        .map(|&g| {
            let sc = presets::smooth(g).validate().unwrap();
            // p0 is renewal-compatible at beta = 1, so no jump forms at s = 0.
            let beta = Field::constant(g, Axes::CONTROL, 1.0);
            solve_state(&sc, &beta).unwrap().p
        })
        .collect();
    let e1 = l1(&restrict(&states[1], grids[0]), &states[0]);
    let e2 = l1(&restrict(&states[2], grids[1]), &states[1]);
    assert!(e1 / e2 >= 1.8, "ratio {} ({e1:.3e}, {e2:.3e})", e1 / e2);
}

#[test]
fn adjoint_bounded_under_refinement() {
    let sups: Vec<f64> = [10, 20, 40, 80]
        .iter()
        .map(|&n| {
            let g = Grid3::unit(n, n, 6);
            let sc = presets::smooth(g).validate().unwrap();
            let beta = Field::constant(g, Axes::CONTROL, 0.5);
            let st = solve_state(&sc, &beta).unwrap();
            solve_adjoint(&sc, &beta, &st).unwrap().phi.sup_norm()
        })
        .collect();
    assert!(sups.iter().all(|v| v.is_finite() && *v > 0.0));
    let d: Vec<f64> = sups.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(d[2] <= d[1] && d[1] <= d[0], "{sups:?}");
    assert!(d[2] / sups[3] < 0.05, "{sups:?}");
}

#[test]
fn adjoint_vanishes_at_largest_size() {
    for n in [20, 40, 80] {
        let g = Grid3::unit(n, n, 4);
        let sc = presets::smooth(g).validate().unwrap();
        let beta = Field::constant(g, Axes::CONTROL, 0.5);
        let st = solve_state(&sc, &beta).unwrap();
        let phi = solve_adjoint(&sc, &beta, &st).unwrap().phi;
        let edge = (0..g.n_times())
            .flat_map(|j| (0..g.nx).map(move |k| (j, k)))
            .map(|(j, k)| phi.get(g.ns - 1, j, k).abs())
            .fold(0.0, f64::max);
        assert!(edge <= 2.0 * g.ds() * sc.cost.c, "n = {n}: {edge:.3e}");
    }
}
