//! Cost functional, projected fixed-point iteration and contraction
//! diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{solve_adjoint_with, AdjointSolution};
use crate::error::{Error, Result};
use crate::field::{Axes, CompensatedSum, Field};
use crate::forward::{StateOperator, StateSolution};
use crate::scenario::{ControlParam, CostParams, InitialGuess, ValidatedScenario};

/// `J = int [p -/+ rho/2 beta^2]`: trapezoid in time, midpoint in size,
/// trapezoid in space. The control term uses one sample per time step.
pub fn evaluate_cost(state: &StateSolution, beta: &Field, cost: &CostParams) -> Result<f64> {
    let g = *state.p.grid();
    let beta = beta.broadcast(Axes::CONTROL)?;
    let mut pop = CompensatedSum::default();
    for (j, p) in state.total_population.iter().enumerate() {
        pop.add(g.wt(j) * p);
    }
    let mut ctrl = CompensatedSum::default();
    for i in 0..g.ns {
        for j in 0..g.nt {
            for k in 0..g.nx {
                let b = beta.get(i, j, k);
                ctrl.add(g.wx(k) * b * b);
            }
        }
    }
    let ctrl = ctrl.value() * g.dt() * g.ds();
    let mut total = CompensatedSum::default();
    total.add(pop.value());
    total.add(cost.sign_variant.sign() * 0.5 * cost.rho * ctrl);
    Ok(total.value())
}

/// `J(beta_a) - J(beta_b)`, summed term by term so that nearby controls do
/// not lose precision to cancellation.
pub fn cost_difference(
    state_a: &StateSolution,
    beta_a: &Field,
    state_b: &StateSolution,
    beta_b: &Field,
    cost: &CostParams,
) -> Result<f64> {
    let g = *state_a.p.grid();
    let ba = beta_a.broadcast(Axes::CONTROL)?;
    let bb = beta_b.broadcast(Axes::CONTROL)?;
    let mut acc = CompensatedSum::default();
    for i in 0..g.ns {
        for j in 0..=g.nt {
            for k in 0..g.nx {
                let w = g.wt(j) * g.ds() * g.wx(k);
                acc.add(w * (state_a.p.get(i, j, k) - state_b.p.get(i, j, k)));
            }
        }
    }
    let c = cost.sign_variant.sign() * 0.5 * cost.rho * g.dt() * g.ds();
    for i in 0..g.ns {
        for j in 0..g.nt {
            for k in 0..g.nx {
                let (a, b) = (ba.get(i, j, k), bb.get(i, j, k));
                acc.add(c * g.wx(k) * (a - b) * (a + b));
            }
        }
    }
    Ok(acc.value())
}

/// Pointwise clip of `h` to `[lo, hi]`.
pub fn project_f(h: &Field, lo: &Field, hi: &Field) -> Result<Field> {
    let axes = Axes::CONTROL;
    let mut out = h.broadcast(axes)?;
    let lo = lo.broadcast(axes)?;
    let hi = hi.broadcast(axes)?;
    for ((v, l), u) in out.values_mut().iter_mut().zip(lo.values()).zip(hi.values()) {
        *v = v.max(*l).min(*u);
    }
    Ok(out)
}

/// `r p phi(0) / c` on the control layout.
fn birth_price(sc: &ValidatedScenario, state: &StateSolution, adjoint: &AdjointSolution) -> Field {
    let g = sc.grid;
    let c = sc.cost.c;
    if !sc.growth_case.has_renewal() {
        return Field::zeros(g, Axes::CONTROL);
    }
    Field::from_fn(g, Axes::CONTROL, |i, j, k| {
        sc.rates.r.eval(g.s(i), g.t(j), g.x(k)) * state.p.get(i, j, k) * adjoint.phi_at_zero.get(0, j, k) / c
    })
}

/// Derivative density of `J` in `beta`: `+/- rho beta - r p phi(0) / c`.
pub fn gradient_field(
    sc: &ValidatedScenario,
    beta: &Field,
    state: &StateSolution,
    adjoint: &AdjointSolution,
) -> Result<Field> {
    let beta = beta.broadcast(Axes::CONTROL)?;
    let s = sc.cost.sign_variant.sign() * sc.cost.rho;
    let mut g = birth_price(sc, state, adjoint);
    for (v, b) in g.values_mut().iter_mut().zip(beta.values()) {
        *v = s * b - *v;
    }
    Ok(g)
}

/// Stationary control `h` before projection: `-/+ r p phi(0) / (c rho)`.
pub fn stationary_control(sc: &ValidatedScenario, state: &StateSolution, adjoint: &AdjointSolution) -> Field {
    let scale = sc.cost.sign_variant.sign() / sc.cost.rho;
    birth_price(sc, state, adjoint).map(|v| scale * v)
}

/// `F(h)` for the scenario's bounds and control parametrization.
pub fn fixed_point_update(sc: &ValidatedScenario, state: &StateSolution, adjoint: &AdjointSolution) -> Result<Field> {
    let h = stationary_control(sc, state, adjoint);
    match sc.tolerances.control {
        ControlParam::Full => project_f(&h, &sc.phi_l, &sc.phi_m),
        ControlParam::TimeOnly => Ok(project_time_only(sc, &h)),
    }
}

/// Weighted mean of `h` over size and space per step, clipped to the
/// tightest bounds of that step.
fn project_time_only(sc: &ValidatedScenario, h: &Field) -> Field {
    let g = sc.grid;
    let theta: Vec<f64> = (0..g.nt)
        .map(|j| {
            let (mut num, mut den) = (0.0, 0.0);
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for i in 0..g.ns {
                for k in 0..g.nx {
                    num += g.wx(k) * h.get(i, j, k);
                    den += g.wx(k);
                    lo = lo.max(sc.phi_l.get(i, j, k));
                    hi = hi.min(sc.phi_m.get(i, j, k));
                }
            }
            (num / den).max(lo).min(hi)
        })
        .collect();
    Field::from_fn(g, Axes::CONTROL, |_, j, _| theta[j])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionDiagnostics {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub ratio: f64,
    pub contraction: bool,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub beta_opt: Field,
    /// `J` at every iterate, including the final control.
    pub j_history: Vec<f64>,
    pub update_residuals: Vec<f64>,
    pub contraction: Option<ContractionDiagnostics>,
    pub status: Status,
}

impl OptimizationReport {
    pub fn iterations(&self) -> usize {
        self.update_residuals.len()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "status": self.status,
            "iterations": self.iterations(),
            "J_history": self.j_history,
            "update_residuals": self.update_residuals,
            "contraction": self.contraction,
        })
    }
}

/// State, adjoint and cost at one control.
pub struct Evaluation {
    pub state: StateSolution,
    pub adjoint: AdjointSolution,
    pub cost: f64,
}

pub fn evaluate(op: &StateOperator, sc: &ValidatedScenario, beta: &Field) -> Result<Evaluation> {
    let state = op.solve(beta)?;
    let adjoint = solve_adjoint_with(op, sc, beta)?;
    let cost = evaluate_cost(&state, beta, &sc.cost)?;
    if !cost.is_finite() {
        return Err(Error::NonFinite { what: "cost", i: 0, j: 0, k: 0 });
    }
    Ok(Evaluation { state, adjoint, cost })
}

pub fn initial_control(sc: &ValidatedScenario, guess: InitialGuess) -> Field {
    match guess {
        InitialGuess::Lower => sc.phi_l.clone(),
        InitialGuess::Upper => sc.phi_m.clone(),
        InitialGuess::Mid => Field::from_fn(sc.grid, Axes::CONTROL, |i, j, k| {
            0.5 * (sc.phi_l.get(i, j, k) + sc.phi_m.get(i, j, k))
        }),
    }
}

/// Runs the fixed-point iteration from the configured initial guess.
pub fn optimize(sc: &ValidatedScenario) -> Result<OptimizationReport> {
    let beta0 = initial_control(sc, sc.tolerances.initial);
    optimize_from(sc, &beta0)
}

/// Runs `beta <- (1 - w) beta + w F(h(beta))` from `beta0`.
pub fn optimize_from(sc: &ValidatedScenario, beta0: &Field) -> Result<OptimizationReport> {
    let tol = &sc.tolerances;
    let op = StateOperator::new(sc)?;
    let mut beta = sc.check_control(beta0)?;
    if tol.control == ControlParam::TimeOnly {
        beta = project_time_only(sc, &beta);
    }
    let mut j_history = Vec::new();
    let mut residuals: Vec<f64> = Vec::new();
    let mut status = Status::MaxIters;
    let mut growing = 0usize;
    for _ in 0..tol.max_iters {
        let ev = evaluate(&op, sc, &beta)?;
        j_history.push(ev.cost);
        let target = fixed_point_update(sc, &ev.state, &ev.adjoint)?;
        let mut next = beta.clone();
        for (b, t) in next.values_mut().iter_mut().zip(target.values()) {
            *b = (1.0 - tol.relax) * *b + tol.relax * t;
        }
        let res = next.max_abs_diff(&beta)?;
        if !res.is_finite() {
            return Err(Error::NonFinite { what: "control update", i: 0, j: 0, k: 0 });
        }
        if residuals.last().is_some_and(|&prev| res > prev) {
            growing += 1;
        } else {
            growing = 0;
        }
        residuals.push(res);
        beta = next;
        if res < tol.tol {
            status = Status::Converged;
            break;
        }
        if growing >= 10 {
            status = Status::Diverged;
            break;
        }
    }
    let last = evaluate(&op, sc, &beta)?;
    j_history.push(last.cost);
    Ok(OptimizationReport {
        beta_opt: beta,
        j_history,
        update_residuals: residuals,
        contraction: None,
        status,
    })
}

/// `n` random constant-level controls `phi_l + u (phi_m - phi_l)`.
pub fn sample_controls(sc: &ValidatedScenario, n: usize, seed: u64) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            Field::from_fn(sc.grid, Axes::CONTROL, |i, j, k| {
                let lo = sc.phi_l.get(i, j, k);
                lo + u * (sc.phi_m.get(i, j, k) - lo)
            })
        })
        .collect()
}

/// Estimates the constants of the contraction condition from control samples.
pub fn contraction_diagnostics(sc: &ValidatedScenario, samples: &[Field]) -> Result<ContractionDiagnostics> {
    if samples.len() < 2 {
        return Err(Error::invalid("need distinct samples"));
    }
    let op = StateOperator::new(sc)?;
    let mut runs = Vec::with_capacity(samples.len());
    for b in samples {
        let b = sc.check_control(b)?;
        let state = op.solve(&b)?;
        let adjoint = solve_adjoint_with(&op, sc, &b)?;
        runs.push((b, state, adjoint));
    }
    let mut m3: f64 = 0.0;
    let mut m4: f64 = 0.0;
    for (_, st, adj) in &runs {
        m3 = m3.max(st.p.sup_norm());
        m4 = m4.max(adj.phi.sup_norm()).max(adj.phi_at_zero.sup_norm());
    }
    let (mut m1, mut m2, mut pairs) = (0.0f64, 0.0f64, 0usize);
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            let db = runs[a].0.max_abs_diff(&runs[b].0)?;
            if db == 0.0 {
                continue;
            }
            pairs += 1;
            m1 = m1.max(runs[a].1.p.max_abs_diff(&runs[b].1.p)? / db);
            m2 = m2.max(runs[a].2.phi_at_zero.max_abs_diff(&runs[b].2.phi_at_zero)? / db);
        }
    }
    if pairs == 0 {
        return Err(Error::invalid("need distinct samples"));
    }
    let ratio = (m1 * m4 + m2 * m3) / (sc.cost.c * sc.cost.rho);
    Ok(ContractionDiagnostics {
        m1,
        m2,
        m3,
        m4,
        ratio,
        contraction: ratio < 1.0,
        samples: samples.len(),
    })
}

/// One row of a gradient check.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub adjoint: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

/// Compares `<g, delta>` (control quadrature) with central differences of
/// `J` along each direction.
pub fn gradient_check(sc: &ValidatedScenario, beta: &Field, directions: &[Field], eps: f64) -> Result<Vec<GradCheck>> {
    let g = sc.grid;
    let op = StateOperator::new(sc)?;
    let beta = sc.check_control(beta)?;
    let ev = evaluate(&op, sc, &beta)?;
    let grad = gradient_field(sc, &beta, &ev.state, &ev.adjoint)?;
    let mut out = Vec::with_capacity(directions.len());
    for d in directions {
        let d = d.broadcast(Axes::CONTROL)?;
        let mut acc = CompensatedSum::default();
        for i in 0..g.ns {
            for j in 0..g.nt {
                for k in 0..g.nx {
                    acc.add(g.ds() * g.dt() * g.wx(k) * grad.get(i, j, k) * d.get(i, j, k));
                }
            }
        }
        let ip = acc.value();
        let plus = beta.axpy(eps, &d)?;
        let minus = beta.axpy(-eps, &d)?;
        let fd = cost_difference(&op.solve(&plus)?, &plus, &op.solve(&minus)?, &minus, &sc.cost)? / (2.0 * eps);
        let rel = (ip - fd).abs() / fd.abs().max(ip.abs()).max(1e-300);
        out.push(GradCheck {
            adjoint: ip,
            finite_difference: fd,
            rel_error: if ip == fd { 0.0 } else { rel },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_state;
    use crate::grid::Grid3;
    use crate::scenario::{ControlBounds, Scenario, SignVariant};
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn unit_state(g: Grid3, v: f64) -> StateSolution {
        let p = Field::constant(g, Axes::STATE, v);
        let total_population = crate::forward::total_population(&p);
        StateSolution {
            newborn_density: Field::zeros(g, Axes::TIME_SPACE),
            p,
            total_population,
        }
    }

    #[test]
    fn cost_examples() {
        let g = Grid3::unit(6, 5, 4);
        let st = unit_state(g, 1.0);
        let one = Field::constant(g, Axes::NONE, 1.0);
        let minus = CostParams { rho: 1.0, c: 1.0, sign_variant: SignVariant::Minus };
        let plus = CostParams { sign_variant: SignVariant::Plus, ..minus };
        assert!((evaluate_cost(&st, &one, &minus).unwrap() - 0.5).abs() < 1e-14);
        assert!((evaluate_cost(&st, &one, &plus).unwrap() - 1.5).abs() < 1e-14);
        let zero = Field::constant(g, Axes::NONE, 0.0);
        assert!((evaluate_cost(&st, &zero, &minus).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        let g = Grid3::unit(2, 2, 2);
        let lo = Field::constant(g, Axes::NONE, 0.1);
        let hi = Field::constant(g, Axes::NONE, 0.4);
        for (h, e) in [(0.5, 0.4), (0.25, 0.25), (-3.0, 0.1)] {
            let out = project_f(&Field::constant(g, Axes::NONE, h), &lo, &hi).unwrap();
            assert!(out.values().iter().all(|&v| v == e));
        }
    }

    proptest! {
        #[test]
        fn projection_idempotent_nonexpansive(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8)) {
            let g = Grid3::unit(2, 2, 2);
            let lo = Field::constant(g, Axes::NONE, -1.0);
            let hi = Field::constant(g, Axes::NONE, 2.0);
            let h1 = Field::from_values(g, Axes::CONTROL, a).unwrap();
            let h2 = Field::from_values(g, Axes::CONTROL, b).unwrap();
            let f1 = project_f(&h1, &lo, &hi).unwrap();
            let f2 = project_f(&h2, &lo, &hi).unwrap();
            prop_assert_eq!(project_f(&f1, &lo, &hi).unwrap(), f1.clone());
            prop_assert!(f1.max_abs_diff(&f2).unwrap() <= h1.max_abs_diff(&h2).unwrap());
        }
    }

    fn adjoint_with_trace(g: Grid3, v: f64) -> AdjointSolution {
        AdjointSolution {
            phi: Field::zeros(g, Axes::STATE),
            phi_at_zero: Field::constant(g, Axes::STEP_SPACE, v),
        }
    }

    #[test]
    fn update_examples() {
        let g = Grid3::unit(3, 3, 2);
        let mut sc = Scenario::new(g);
        sc.bounds = ControlBounds::constant(0.1, 0.4);
        sc.rates.r = 0.5.into();
        sc.cost = CostParams { rho: 2.0, c: 1.0, sign_variant: SignVariant::Minus };
        let v = sc.validate().unwrap();
        let st = unit_state(g, 1.0);
        // phi = 0 -> phi_l
        let upd = fixed_point_update(&v, &st, &adjoint_with_trace(g, 0.0)).unwrap();
        assert!(upd.values().iter().all(|&x| x == 0.1));
        // r p phi0 / (c rho) = 0.5 * phi0 / 2 = -0.25
        let adj = adjoint_with_trace(g, -1.0);
        let upd = fixed_point_update(&v, &st, &adj).unwrap();
        assert!(upd.values().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let scaled = v.with_cost(CostParams { rho: 1.0, c: 2.0, ..v.cost }).unwrap();
        let adj2 = adjoint_with_trace(g, -1.0);
        let upd2 = fixed_point_update(&scaled, &st, &adj2).unwrap();
        assert!(upd2.max_abs_diff(&upd).unwrap() < 1e-15);
    }

    #[test]
    fn gradient_without_adjoint_is_control_term() {
        let g = Grid3::unit(3, 3, 2);
        let v = Scenario::new(g).validate().unwrap();
        let beta = Field::constant(g, Axes::NONE, 0.3);
        let grad = gradient_field(&v, &beta, &unit_state(g, 1.0), &adjoint_with_trace(g, 0.0)).unwrap();
        assert!(grad.values().iter().all(|&x| (x + 0.3).abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = Grid3::unit(6, 6, 4);
        let mut sc = Scenario::new(g);
        sc.bounds = ControlBounds::constant(0.0, 2.0);
        sc.rates.mu = crate::rates::Preset::LinearS { a: 0.2, b: 0.5 }.into();
        sc.k = 0.05;
        let v = sc.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let beta = Field::from_fn(g, Axes::CONTROL, |_, _, _| rng.gen_range(0.2..1.8));
        let dirs: Vec<Field> = (0..4)
            .map(|_| Field::from_fn(g, Axes::CONTROL, |_, _, _| rng.gen_range(-1.0..1.0)))
            .collect();
        for row in gradient_check(&v, &beta, &dirs, 1e-6).unwrap() {
            assert!(row.rel_error < 1e-6, "{row:?}");
        }
    }

    #[test]
    fn degenerate_box_converges_in_one_iteration() {
        let g = Grid3::unit(4, 4, 3);
        let mut sc = Scenario::new(g);
        sc.bounds = ControlBounds::constant(0.3, 0.3);
        let v = sc.validate().unwrap();
        let rep = optimize(&v).unwrap();
        assert_eq!(rep.status, Status::Converged);
        assert_eq!(rep.iterations(), 1);
        assert!(rep.beta_opt.values().iter().all(|&b| b == 0.3));
    }

    #[test]
    fn diagnostics_on_zero_state() {
        let g = Grid3::unit(4, 4, 3);
        let mut sc = Scenario::new(g);
        sc.rates.p0 = 0.0.into();
        let v = sc.validate().unwrap();
        let a = Field::constant(g, Axes::CONTROL, 0.2);
        let mut b = a.clone();
        b.set(1, 1, 1, 0.7);
        let d = contraction_diagnostics(&v, &[a.clone(), b]).unwrap();
        assert_eq!(d.m1, 0.0);
        assert_eq!(d.m3, 0.0);
        assert_eq!(d.ratio, 0.0);
        assert!(d.contraction);
        let err = contraction_diagnostics(&v, &[a.clone(), a]).unwrap_err();
        assert!(err.to_string().contains("need distinct samples"));
    }

    #[test]
    fn ratio_scales_inversely_with_rho() {
        let g = Grid3::unit(5, 5, 3);
        let v = Scenario::new(g).validate().unwrap();
        let samples = sample_controls(&v, 3, 9);
        let d1 = contraction_diagnostics(&v, &samples).unwrap();
        let v2 = v.with_cost(CostParams { rho: 2.0 * v.cost.rho, ..v.cost }).unwrap();
        let d2 = contraction_diagnostics(&v2, &samples).unwrap();
        assert!((d1.ratio - 2.0 * d2.ratio).abs() < 1e-12 * d1.ratio);
    }

    #[test]
    fn plus_variant_converges_to_lower_bound() {
        let g = Grid3::unit(5, 5, 3);
        let mut sc = Scenario::new(g);
        sc.cost.sign_variant = SignVariant::Plus;
        sc.tolerances.initial = InitialGuess::Upper;
        let v = sc.validate().unwrap();
        let rep = optimize(&v).unwrap();
        assert_eq!(rep.status, Status::Converged);
        let st = solve_state(&v, &rep.beta_opt).unwrap();
        assert!(st.p.min() >= 0.0);
        assert!(rep.beta_opt.values().iter().all(|&b| b == 0.0));
    }
}
