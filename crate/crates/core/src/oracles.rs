//! Built-in verification oracles run by the `oracle` subcommand.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::{duality_residual, solve_adjoint, solve_sensitivity};
use crate::error::{Error, Result};
use crate::field::{Axes, Field};
use crate::forward::{solve_state, step_diffusion, StateOperator};
use crate::grid::Grid3;
use crate::optimizer::{evaluate_cost, gradient_check, optimize};
use crate::presets;
use crate::scenario::{ControlParam, SignVariant, ValidatedScenario};

pub const NAMES: [&str; 6] = [
    "heat_mode",
    "pure_transport",
    "mass_balance",
    "transpose_duality",
    "gradcheck",
    "brute_force",
];

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl OracleResult {
    fn below(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        OracleResult {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub seed: u64,
    pub results: Vec<OracleResult>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleOptions {
    /// Scenario for the duality and gradient oracles; built-ins otherwise.
    pub scenario: Option<ValidatedScenario>,
    /// Subset of [`NAMES`] to run; all when empty.
    pub only: Vec<String>,
    pub seed: u64,
    /// Corrupts the transposed step (fault-injection check).
    pub fault_adjoint: bool,
}

pub fn run_oracles(opts: &OracleOptions) -> Result<OracleReport> {
    if let Some(bad) = opts.only.iter().find(|n| !NAMES.contains(&n.as_str())) {
        return Err(Error::Config(format!("unknown oracle `{bad}` (known: {})", NAMES.join(", "))));
    }
    let mut results = Vec::new();
    for name in NAMES {
        if !opts.only.is_empty() && !opts.only.iter().any(|n| n == name) {
            continue;
        }
        let r = match name {
            "heat_mode" => heat_mode()?,
            "pure_transport" => pure_transport()?,
            "mass_balance" => mass_balance()?,
            "transpose_duality" => transpose_duality(opts)?,
            "gradcheck" => gradcheck(opts)?,
            _ => brute_force()?,
        };
        results.push(r);
    }
    Ok(OracleReport { seed: opts.seed, results })
}

/// Constants, trapezoid mass and the first cosine mode under one diffusion step.
fn heat_mode() -> Result<OracleResult> {
    let (nx, k, dt) = (41, 0.05, 0.01);
    let g = Grid3::new(2, 2, nx, 1.0, 1.0, 2.0)?;
    let dx = g.dx();
    let l = g.length;
    let lambda = 2.0 * (1.0 - (PI * dx / l).cos()) / (dx * dx);
    let factor = 1.0 / (1.0 + k * lambda * dt);
    let mode = Field::from_fn(g, Axes::SIZE_SPACE, |_, _, kk| (PI * g.x(kk) / l).cos());
    let out = step_diffusion(&mode, k, dt)?;
    let mode_err = (0..nx)
        .map(|kk| (out.get(0, 0, kk) - factor * mode.get(0, 0, kk)).abs())
        .fold(0.0, f64::max);
    let c = Field::constant(g, Axes::SIZE_SPACE, 3.0);
    let const_err = step_diffusion(&c, k, dt)?.max_abs_diff(&c)?;
    let bump = Field::from_fn(g, Axes::SIZE_SPACE, |_, _, kk| (-(g.x(kk) - 0.3).powi(2) * 20.0).exp());
    let moved = step_diffusion(&bump, k, dt)?;
    let mass = |f: &Field| (0..nx).map(|kk| g.wx(kk) * f.get(0, 0, kk)).sum::<f64>();
    let mass_err = (mass(&moved) - mass(&bump)).abs() / mass(&bump);
    let worst = mode_err.max(const_err).max(mass_err);
    Ok(OracleResult::below(
        "heat_mode",
        worst,
        1e-12,
        format!("mode {mode_err:.2e}, constant {const_err:.2e}, mass {mass_err:.2e}"),
    ))
}

/// L1 error of pure transport against the exact solution for
/// `gamma = 1 + s/2`, `p0 = s (1 - s)`; the error must halve under refinement.
pub fn transport_errors(sizes: &[usize]) -> Result<Vec<f64>> {
    let t_final = 0.4;
    sizes
        .iter()
        .map(|&n| {
            let g = Grid3::new(n, n, 3, 1.0, t_final, 1.0)?;
            let sc = presets::transport(g).validate()?;
            let st = solve_state(&sc, &Field::zeros(g, Axes::CONTROL))?;
            let q = (-0.5 * t_final).exp();
            let mut err = 0.0;
            for i in 0..g.ns {
                let s0 = (g.s(i) + 2.0) * q - 2.0;
                let exact = if s0 >= 0.0 { s0 * (1.0 - s0) * q } else { 0.0 };
                for k in 0..g.nx {
                    err += (st.p.get(i, g.nt, k) - exact).abs() * g.ds() * g.wx(k);
                }
            }
            Ok(err)
        })
        .collect()
}

fn pure_transport() -> Result<OracleResult> {
    let errs = transport_errors(&[40, 80, 160])?;
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let worst = ratios.iter().map(|r| (r - 2.0).abs()).fold(0.0, f64::max);
    Ok(OracleResult::below(
        "pure_transport",
        worst,
        0.4,
        format!("L1 errors {errs:.3?}, refinement ratios {ratios:.3?}"),
    ))
}

/// Largest per-step relative defect of the population balance
/// `dP/dt = births - outflow at s_f - deaths + sources`.
pub fn mass_balance_defect(sc: &ValidatedScenario, beta: &Field) -> Result<f64> {
    let g = sc.grid;
    let beta = sc.check_control(beta)?;
    let st = solve_state(sc, &beta)?;
    let r = &sc.rates;
    let outflow = sc.growth_case.has_outflow();
    let renewal = sc.growth_case.has_renewal();
    let terms = |j: usize| {
        let t = g.t(j);
        let jb = j.min(g.nt - 1);
        let (mut births, mut out, mut deaths, mut src) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..g.nx {
            let x = g.x(k);
            let mut flux = r.c_inflow.eval(0.0, t, x);
            for i in 0..g.ns {
                let p = st.p.get(i, j, k);
                let w = g.wx(k) * g.ds();
                flux += r.r.eval(g.s(i), t, x) * beta.get(i, jb, k) * p * g.ds();
                deaths += w * r.mu.eval(g.s(i), t, x) * p;
                src += w * r.f.eval(g.s(i), t, x);
            }
            if renewal {
                births += g.wx(k) * flux;
            }
            if outflow {
                let edge = 1.5 * st.p.get(g.ns - 1, j, k) - 0.5 * st.p.get(g.ns - 2, j, k);
                out += g.wx(k) * r.growth.gamma(g.s_f, t) * edge;
            }
        }
        (births - out - deaths + src, births + out + deaths + src)
    };
    let mut worst: f64 = 0.0;
    let mut prev = terms(0);
    for j in 0..g.nt {
        let next = terms(j + 1);
        let rhs = 0.5 * g.dt() * (prev.0 + next.0);
        let scale = 0.5 * g.dt() * (prev.1 + next.1);
        let lhs = st.total_population[j + 1] - st.total_population[j];
        worst = worst.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
        prev = next;
    }
    Ok(worst)
}

fn mass_balance() -> Result<OracleResult> {
    let g = Grid3::new(400, 400, 5, 1.0, 1.0, 1.0)?;
    let sc = presets::smooth(g).validate()?;
    let defect = mass_balance_defect(&sc, &Field::constant(g, Axes::CONTROL, 1.0))?;
    Ok(OracleResult::below(
        "mass_balance",
        defect,
        1e-3,
        "smooth preset, 400x400x5, beta = 1".into(),
    ))
}

/// Largest relative mismatch of `<A_j u, v> = <u, A_j^T v>` over random
/// positive pairs and all steps.
pub fn transpose_mismatch(op: &StateOperator, beta: &Field, pairs: usize, rng: &mut ChaCha8Rng) -> f64 {
    let g = *op.grid();
    let n = g.ns * g.nx;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        for j in 0..g.nt {
            let au = op.step_linear(j, &u, beta);
            let (atv, _) = op.step_transpose(j, &v, beta);
            let lhs: f64 = au.iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(&atv).map(|(a, b)| a * b).sum();
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE));
        }
    }
    worst
}

fn transpose_duality(opts: &OracleOptions) -> Result<OracleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sc = match &opts.scenario {
        Some(sc) => sc.clone(),
        None => presets::random(Grid3::unit(3, 3, 4), &mut rng).validate()?,
    };
    let g = sc.grid;
    let beta = Field::from_fn(g, Axes::CONTROL, |i, j, k| {
        let (lo, hi) = (sc.phi_l.get(i, j, k), sc.phi_m.get(i, j, k));
        lo + rng.gen_range(0.0..1.0) * (hi - lo)
    });
    let op = StateOperator::new(&sc)?.with_adjoint_fault(opts.fault_adjoint);
    let step = transpose_mismatch(&op, &beta, 100, &mut rng);
    let delta = Field::from_fn(g, Axes::CONTROL, |_, _, _| rng.gen_range(-1.0..1.0));
    let st = solve_state(&sc, &beta)?;
    let adj = if opts.fault_adjoint {
        crate::adjoint::solve_adjoint_with(&op, &sc, &beta)?
    } else {
        solve_adjoint(&sc, &beta, &st)?
    };
    let z = solve_sensitivity(&sc, &beta, &st, &delta)?;
    let resid = duality_residual(&sc, &st, &adj, &z, &delta)?;
    Ok(OracleResult {
        name: "transpose_duality".into(),
        measured: step.max(resid),
        tolerance: 1e-12,
        passed: step <= 1e-12 && resid <= 1e-10,
        detail: format!("step mismatch {step:.2e} (tol 1e-12), duality residual {resid:.2e} (tol 1e-10)"),
    })
}

fn gradcheck(opts: &OracleOptions) -> Result<OracleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sc = match &opts.scenario {
        Some(sc) => sc.clone(),
        None => presets::smooth(Grid3::unit(20, 20, 10)).validate()?,
    };
    let rows = run_gradcheck(&sc, 10, &mut rng)?;
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(OracleResult::below(
        "gradcheck",
        worst,
        1e-6,
        format!("{} random directions", rows.len()),
    ))
}

/// Gradient check at a random interior control along `n` random feasible
/// directions, with `eps = 1e-6 |beta|_inf`.
pub fn run_gradcheck(sc: &ValidatedScenario, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<crate::optimizer::GradCheck>> {
    let g = sc.grid;
    let beta = Field::from_fn(g, Axes::CONTROL, |i, j, k| {
        let (lo, hi) = (sc.phi_l.get(i, j, k), sc.phi_m.get(i, j, k));
        lo + rng.gen_range(0.2..0.8) * (hi - lo)
    });
    let dirs: Vec<Field> = (0..n)
        .map(|_| Field::from_fn(g, Axes::CONTROL, |_, _, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let eps = 1e-6 * beta.sup_norm().max(1e-3);
    gradient_check(sc, &beta, &dirs, eps)
}

/// Exhaustive minimum of `J` over time-only controls on a lattice of
/// `levels` values per step. Returns the minimum, its lattice point and the
/// largest change of `J` to a neighbouring lattice point.
pub fn brute_force_minimum(sc: &ValidatedScenario, levels: usize) -> Result<(f64, Vec<usize>, f64)> {
    let g = sc.grid;
    let lo = sc.phi_l.get(0, 0, 0);
    let hi = sc.phi_m.get(0, 0, 0);
    let level = |q: usize| lo + (hi - lo) * q as f64 / (levels - 1) as f64;
    let op = StateOperator::new(sc)?;
    let cost = |idx: &[usize]| -> Result<f64> {
        let beta = Field::from_fn(g, Axes::CONTROL, |_, j, _| level(idx[j]));
        evaluate_cost(&op.solve(&beta)?, &beta, &sc.cost)
    };
    let total = levels.pow(g.nt as u32);
    let mut best = (f64::INFINITY, vec![0; g.nt]);
    for code in 0..total {
        let idx: Vec<usize> = (0..g.nt).map(|d| (code / levels.pow(d as u32)) % levels).collect();
        let j = cost(&idx)?;
        if j < best.0 {
            best = (j, idx);
        }
    }
    let mut step: f64 = 0.0;
    for d in 0..g.nt {
        for delta in [-1i64, 1] {
            let q = best.1[d] as i64 + delta;
            if q < 0 || q >= levels as i64 {
                continue;
            }
            let mut idx = best.1.clone();
            idx[d] = q as usize;
            step = step.max((cost(&idx)? - best.0).abs());
        }
    }
    Ok((best.0, best.1, step))
}

fn brute_force() -> Result<OracleResult> {
    let mut s = presets::tiny();
    s.cost.sign_variant = SignVariant::Plus;
    s.tolerances.control = ControlParam::TimeOnly;
    let sc = s.validate()?;
    let (jmin, _, step) = brute_force_minimum(&sc, 21)?;
    let rep = optimize(&sc)?;
    let jopt = *rep.j_history.last().expect("at least one iterate");
    Ok(OracleResult::below(
        "brute_force",
        jopt - jmin,
        step,
        format!("J_opt {jopt:.6}, lattice minimum {jmin:.6}, one quantization step {step:.3e}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_is_detected_and_filtering_works() {
        let opts = OracleOptions {
            only: vec!["transpose_duality".into()],
            seed: 3,
            ..Default::default()
        };
        let rep = run_oracles(&opts).unwrap();
        assert_eq!(rep.results.len(), 1);
        assert!(rep.all_passed(), "{:?}", rep.results);
        let bad = run_oracles(&OracleOptions { fault_adjoint: true, ..opts }).unwrap();
        assert!(!bad.all_passed());
        let only = run_oracles(&OracleOptions {
            only: vec!["gradcheck".into()],
            ..Default::default()
        })
        .unwrap();
        assert_eq!(only.results.len(), 1);
        assert_eq!(only.results[0].name, "gradcheck");
        assert!(run_oracles(&OracleOptions {
            only: vec!["nope".into()],
            ..Default::default()
        })
        .is_err());
    }
}
