//! Discrete adjoint and linearized sensitivity.
//!
//! The adjoint marches backward with the exact transpose of the forward
//! one-step map, so duality between the sensitivity and the adjoint holds to
//! rounding error. It is scaled so that `phi = -c * (marginal value of one
//! unit of density)`; with this scaling the gradient density of `J` in `beta`
//! is `-r p phi(0) / c` plus the control term.

use crate::error::{Error, Result};
use crate::field::{Axes, Field};
use crate::forward::{set_time_slice, time_slice, StateOperator, StateSolution};
use crate::scenario::ValidatedScenario;

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// `phi(s_i, t_j, x_k)` on time nodes; zero at `t = T`.
    pub phi: Field,
    /// `phi(0, t, x)` per time step (control layout without size).
    pub phi_at_zero: Field,
}

#[derive(Debug, Clone)]
pub struct SensitivitySolution {
    pub z: Field,
}

fn check_state(sc: &ValidatedScenario, state: &StateSolution) -> Result<()> {
    if state.p.grid() != &sc.grid || state.p.axes() != Axes::STATE {
        return Err(Error::Layout("state was solved on a different grid".into()));
    }
    Ok(())
}

/// Quadrature weights `wt_j ds wx_k` of the state at node `j`.
fn state_weights(sc: &ValidatedScenario, j: usize) -> Vec<f64> {
    let g = sc.grid;
    let mut w = Vec::with_capacity(g.ns * g.nx);
    for _ in 0..g.ns {
        for k in 0..g.nx {
            w.push(g.wt(j) * g.ds() * g.wx(k));
        }
    }
    w
}

/// Solves the adjoint backward for control `beta` using a prebuilt operator.
pub fn solve_adjoint_with(op: &StateOperator, sc: &ValidatedScenario, beta: &Field) -> Result<AdjointSolution> {
    let g = sc.grid;
    let c = sc.cost.c;
    let mut phi = Field::zeros(g, Axes::STATE);
    let mut phi0 = Field::zeros(g, Axes::STEP_SPACE);
    let mut lambda = state_weights(sc, g.nt);
    for j in (0..g.nt).rev() {
        let (mu, nu) = op.step_transpose(j, &lambda, beta);
        let slice: Vec<f64> = mu
            .iter()
            .enumerate()
            .map(|(idx, m)| -c * m / (g.ds() * g.wx(idx % g.nx)))
            .collect();
        if let Some(pos) = slice.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "adjoint",
                i: pos / g.nx,
                j,
                k: pos % g.nx,
            });
        }
        set_time_slice(&mut phi, j, &slice);
        for (k, v) in nu.iter().enumerate() {
            phi0.set(0, j, k, -c * v / (g.dt() * g.wx(k)));
        }
        let w = state_weights(sc, j);
        lambda = w.iter().zip(&mu).map(|(a, b)| a + b).collect();
    }
    Ok(AdjointSolution { phi, phi_at_zero: phi0 })
}

/// Solves the adjoint system for control `beta` and its state.
pub fn solve_adjoint(sc: &ValidatedScenario, beta: &Field, state: &StateSolution) -> Result<AdjointSolution> {
    check_state(sc, state)?;
    let beta = sc.check_control(beta)?;
    solve_adjoint_with(&StateOperator::new(sc)?, sc, &beta)
}

/// Per-step newborn forcing `int r delta p ds` of the sensitivity system.
fn delta_births(op: &StateOperator, sc: &ValidatedScenario, state: &StateSolution, delta: &Field, j: usize) -> Vec<f64> {
    let g = sc.grid;
    let mut out = vec![0.0; g.nx];
    if !op.growth_case().has_renewal() {
        return out;
    }
    let r_ds = op.r_ds(j);
    for i in 0..g.ns {
        for k in 0..g.nx {
            out[k] += r_ds[i * g.nx + k] * delta.get(i, j, k) * state.p.get(i, j, k);
        }
    }
    out
}

/// Solves the linearized state system in direction `delta`.
pub fn solve_sensitivity(
    sc: &ValidatedScenario,
    beta: &Field,
    state: &StateSolution,
    delta: &Field,
) -> Result<SensitivitySolution> {
    check_state(sc, state)?;
    let beta = sc.check_control(beta)?;
    if delta.grid() != &sc.grid {
        return Err(Error::Layout("direction grid differs from scenario grid".into()));
    }
    let delta = delta.broadcast(Axes::CONTROL)?;
    let op = StateOperator::new(sc)?;
    let g = sc.grid;
    let mut z = Field::zeros(g, Axes::STATE);
    let mut cur = vec![0.0; g.ns * g.nx];
    for j in 0..g.nt {
        let forcing = delta_births(&op, sc, state, &delta, j);
        cur = op.step_linear_forced(j, &cur, &beta, &forcing);
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "sensitivity", i: 0, j: j + 1, k: 0 });
        }
        set_time_slice(&mut z, j + 1, &cur);
    }
    Ok(SensitivitySolution { z })
}

/// Relative mismatch of the duality identity
/// `-c int z = int delta r p phi(0)`.
pub fn duality_residual(
    sc: &ValidatedScenario,
    state: &StateSolution,
    adjoint: &AdjointSolution,
    sensitivity: &SensitivitySolution,
    delta: &Field,
) -> Result<f64> {
    let g = sc.grid;
    let delta = delta.broadcast(Axes::CONTROL)?;
    let mut lhs = 0.0;
    for j in 0..=g.nt {
        let zj = time_slice(&sensitivity.z, j);
        lhs += zj.iter().zip(state_weights(sc, j)).map(|(a, w)| a * w).sum::<f64>();
    }
    lhs *= -sc.cost.c;
    let mut rhs = 0.0;
    if sc.growth_case.has_renewal() {
        for j in 0..g.nt {
            let t = g.t(j);
            for i in 0..g.ns {
                for k in 0..g.nx {
                    let r = sc.rates.r.eval(g.s(i), t, g.x(k));
                    rhs += g.dt() * g.ds() * g.wx(k)
                        * delta.get(i, j, k)
                        * r
                        * state.p.get(i, j, k)
                        * adjoint.phi_at_zero.get(0, j, k);
                }
            }
        }
    }
    Ok((lhs - rhs).abs() / rhs.abs().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_state;
    use crate::grid::Grid3;
    use crate::rates::{Preset, RateSpec};
    use crate::scenario::{ControlBounds, Scenario};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scenario(rng: &mut ChaCha8Rng, g: Grid3) -> ValidatedScenario {
        let mut sc = Scenario::new(g);
        let mut table = |axes: Axes, lo: f64, hi: f64| {
            let n: usize = axes.shape(&g).iter().product();
            RateSpec::Table((0..n).map(|_| rng.gen_range(lo..hi)).collect())
        };
        sc.rates.mu = table(Axes::STATE, 0.1, 1.0);
        sc.rates.r = table(Axes::STATE, 0.1, 0.9);
        sc.rates.f = table(Axes::STATE, 0.0, 0.5);
        sc.rates.c_inflow = table(Axes::TIME_SPACE, 0.0, 0.5);
        sc.rates.p0 = table(Axes::SIZE_SPACE, 0.1, 2.0);
        sc.rates.gamma = Preset::LinearS { a: 1.0, b: 0.4 }.into();
        sc.k = 0.3;
        sc.bounds = ControlBounds::constant(0.0, 2.0);
        sc.validate().unwrap()
    }

    fn random_control(rng: &mut ChaCha8Rng, g: Grid3, hi: f64) -> Field {
        Field::from_fn(g, Axes::CONTROL, |_, _, _| rng.gen_range(0.0..hi))
    }

    #[test]
    fn step_matrix_is_transposed_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid3::unit(3, 3, 4);
        let sc = random_scenario(&mut rng, g);
        let beta = random_control(&mut rng, g, 2.0);
        let op = StateOperator::new(&sc).unwrap();
        let n = g.ns * g.nx;
        for j in 0..g.nt {
            let mut a = vec![0.0; n * n];
            let mut at = vec![0.0; n * n];
            for col in 0..n {
                let mut e = vec![0.0; n];
                e[col] = 1.0;
                let y = op.step_linear(j, &e, &beta);
                let (yt, _) = op.step_transpose(j, &e, &beta);
                for row in 0..n {
                    a[row * n + col] = y[row];
                    at[row * n + col] = yt[row];
                }
            }
            for r in 0..n {
                for c in 0..n {
                    assert!((a[r * n + c] - at[c * n + r]).abs() < 1e-12, "step {j} ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn duality_residual_tiny_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Grid3::unit(3, 3, 4);
        let sc = random_scenario(&mut rng, g);
        let beta = random_control(&mut rng, g, 1.0);
        let delta = Field::from_fn(g, Axes::CONTROL, |_, _, _| rng.gen_range(-1.0..1.0));
        let st = solve_state(&sc, &beta).unwrap();
        let adj = solve_adjoint(&sc, &beta, &st).unwrap();
        let z = solve_sensitivity(&sc, &beta, &st, &delta).unwrap();
        assert!(duality_residual(&sc, &st, &adj, &z, &delta).unwrap() < 1e-10);
        let zero = Field::zeros(g, Axes::CONTROL);
        let z0 = solve_sensitivity(&sc, &beta, &st, &zero).unwrap();
        assert_eq!(z0.z.sup_norm(), 0.0);
        assert_eq!(duality_residual(&sc, &st, &adj, &z0, &zero).unwrap(), 0.0);
    }

    #[test]
    fn terminal_slice_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid3::unit(5, 4, 3);
        let sc = random_scenario(&mut rng, g);
        let beta = random_control(&mut rng, g, 1.0);
        let st = solve_state(&sc, &beta).unwrap();
        let adj = solve_adjoint(&sc, &beta, &st).unwrap();
        for i in 0..g.ns {
            for k in 0..g.nx {
                assert_eq!(adj.phi.get(i, g.nt, k), 0.0);
            }
        }
    }

    #[test]
    fn pure_transport_adjoint_is_distance_to_exit() {
        // phi = -c * min(T - t, s_f - s) up to O(ds + dt)
        let g = Grid3::new(80, 80, 2, 1.0, 1.0, 1.0).unwrap();
        let mut sc = Scenario::new(g);
        sc.k = 1e-9;
        let sc = sc.validate().unwrap();
        let beta = Field::zeros(g, Axes::CONTROL);
        let st = solve_state(&sc, &beta).unwrap();
        let adj = solve_adjoint(&sc, &beta, &st).unwrap();
        let mut err: f64 = 0.0;
        for i in 0..g.ns {
            for j in 0..=g.nt {
                let expect = -(g.t_final - g.t(j)).min(g.s_f - g.s(i));
                err = err.max((adj.phi.get(i, j, 0) - expect).abs());
            }
        }
        assert!(err < 2.0 * (g.ds() + g.dt()), "err {err}");
    }

    #[test]
    fn sensitivity_matches_state_driven_by_inflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid3::unit(8, 6, 5);
        let sc = random_scenario(&mut rng, g);
        let beta = random_control(&mut rng, g, 1.0);
        let st = solve_state(&sc, &beta).unwrap();
        let zero = Field::zeros(g, Axes::CONTROL);
        let delta = Field::constant(g, Axes::NONE, 0.7);
        // linearize around beta = 0 with the state from the beta run
        let z = solve_sensitivity(&sc, &zero, &st, &delta).unwrap();

        let op = StateOperator::new(&sc).unwrap();
        let full_delta = delta.broadcast(Axes::CONTROL).unwrap();
        let mut inflow = vec![0.0; (g.nt + 1) * g.nx];
        for j in 0..g.nt {
            for (k, v) in delta_births(&op, &sc, &st, &full_delta, j).into_iter().enumerate() {
                inflow[j * g.nx + k] = v;
            }
        }
        let mut other = sc.scenario().clone();
        other.rates.c_inflow = RateSpec::Table(inflow);
        other.rates.f = 0.0.into();
        other.rates.p0 = 0.0.into();
        let other = other.validate().unwrap();
        let resp = solve_state(&other, &zero).unwrap();
        assert!(resp.p.max_abs_diff(&z.z).unwrap() < 1e-12 * resp.p.sup_norm().max(1.0));
    }
}
