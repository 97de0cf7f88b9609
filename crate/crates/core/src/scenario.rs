//! Problem instances and their validation.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::characteristics::{classify_growth_case, Growth, GrowthCase};
use crate::error::{Error, Result};
use crate::field::{Axes, Field};
use crate::grid::Grid3;
use crate::rates::{Rate, RateSpec};

/// Vital rates, sources and initial data as specified.
#[derive(Debug, Clone, PartialEq)]
pub struct VitalRates {
    /// Growth rate gamma(s,t).
    pub gamma: RateSpec,
    /// Mortality mu(s,t,x).
    pub mu: RateSpec,
    /// Female ratio r(s,t,x), strictly between 0 and 1.
    pub r: RateSpec,
    /// Inflow of s-size individuals f(s,t,x).
    pub f: RateSpec,
    /// Inflow of zero-size individuals C(t,x).
    pub c_inflow: RateSpec,
    /// Initial density p0(s,x).
    pub p0: RateSpec,
}

impl Default for VitalRates {
    fn default() -> Self {
        VitalRates {
            gamma: 1.0.into(),
            mu: 0.0.into(),
            r: 0.5.into(),
            f: 0.0.into(),
            c_inflow: 0.0.into(),
            p0: 1.0.into(),
        }
    }
}

/// Box constraints `phi_l <= beta <= phi_m` on the control.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    pub phi_l: RateSpec,
    pub phi_m: RateSpec,
}

impl ControlBounds {
    pub fn constant(lo: f64, hi: f64) -> Self {
        ControlBounds {
            phi_l: lo.into(),
            phi_m: hi.into(),
        }
    }
}

/// Which sign the control term carries in the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SignVariant {
    /// `J = int [p - rho/2 beta^2]`
    #[default]
    Minus,
    /// `J = int [p + rho/2 beta^2]`
    Plus,
}

impl SignVariant {
    /// Sign of the quadratic control term.
    pub fn sign(self) -> f64 {
        match self {
            SignVariant::Minus => -1.0,
            SignVariant::Plus => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    /// Control weight.
    pub rho: f64,
    /// Adjoint source scale.
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default)]
    pub sign_variant: SignVariant,
}

fn one() -> f64 {
    1.0
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            rho: 1.0,
            c: 1.0,
            sign_variant: SignVariant::Minus,
        }
    }
}

/// Starting control of the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialGuess {
    #[default]
    Lower,
    Upper,
    Mid,
}

/// Admissible control shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControlParam {
    /// One value per (size, step, space) sample.
    #[default]
    Full,
    /// One value per time step, constant in size and space.
    TimeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Stop when the sup-norm control update drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Relaxation weight in (0, 1].
    pub relax: f64,
    pub initial: InitialGuess,
    pub control: ControlParam,
    /// Seed for randomized diagnostics.
    pub seed: u64,
    /// Number of control samples for contraction diagnostics.
    pub samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol: 1e-8,
            max_iters: 200,
            relax: 1.0,
            initial: InitialGuess::Lower,
            control: ControlParam::Full,
            seed: 42,
            samples: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: Grid3,
    pub rates: VitalRates,
    /// Diffusion coefficient.
    pub k: f64,
    pub bounds: ControlBounds,
    pub cost: CostParams,
    pub tolerances: Tolerances,
}

impl Scenario {
    /// Constant-rate scenario on `grid`: gamma = 1, mu = 0, r = 1/2,
    /// no sources, p0 = 1, k = 0.01, bounds [0, 1].
    pub fn new(grid: Grid3) -> Self {
        Scenario {
            grid,
            rates: VitalRates::default(),
            k: 0.01,
            bounds: ControlBounds::constant(0.0, 1.0),
            cost: CostParams::default(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<ValidatedScenario> {
        ValidatedScenario::new(self.clone())
    }
}

/// Rates resolved against the grid.
#[derive(Debug, Clone)]
pub struct ResolvedRates {
    pub growth: Growth,
    pub mu: Rate,
    pub r: Rate,
    pub f: Rate,
    pub c_inflow: Rate,
}

/// A scenario whose invariants have been checked.
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    scenario: Scenario,
    pub rates: ResolvedRates,
    pub growth_case: GrowthCase,
    /// Initial density on (size, space).
    pub p0: Field,
    /// Lower control bound on the control layout.
    pub phi_l: Field,
    /// Upper control bound on the control layout.
    pub phi_m: Field,
}

impl Deref for ValidatedScenario {
    type Target = Scenario;
    fn deref(&self) -> &Scenario {
        &self.scenario
    }
}

impl ValidatedScenario {
    fn new(sc: Scenario) -> Result<Self> {
        let g = sc.grid;
        g.check()?;
        let resolve = |spec: &RateSpec, axes: Axes, key: &str| spec.resolve(&g, axes, key);
        let gamma = resolve(&sc.rates.gamma, Axes::SIZE_TIME, "gamma")?;
        let mu = resolve(&sc.rates.mu, Axes::STATE, "mu")?;
        let r = resolve(&sc.rates.r, Axes::STATE, "r")?;
        let f = resolve(&sc.rates.f, Axes::STATE, "f")?;
        let c_inflow = resolve(&sc.rates.c_inflow, Axes::TIME_SPACE, "C")?;
        let p0 = resolve(&sc.rates.p0, Axes::SIZE_SPACE, "p0")?;
        let phi_l = resolve(&sc.bounds.phi_l, Axes::CONTROL, "phi_l")?;
        let phi_m = resolve(&sc.bounds.phi_m, Axes::CONTROL, "phi_m")?;

        let mut errs = Vec::new();
        if !(sc.k.is_finite() && sc.k > 0.0) {
            errs.push(format!("diffusion coefficient k must be > 0 (got {})", sc.k));
        }
        if !(sc.cost.rho.is_finite() && sc.cost.rho > 0.0) {
            errs.push(format!("cost: rho must be > 0 (got {})", sc.cost.rho));
        }
        if !(sc.cost.c.is_finite() && sc.cost.c > 0.0) {
            errs.push(format!("cost: c must be > 0 (got {})", sc.cost.c));
        }
        let tol = &sc.tolerances;
        if !(tol.relax > 0.0 && tol.relax <= 1.0) {
            errs.push(format!("tolerances: relax must lie in (0, 1] (got {})", tol.relax));
        }
        if !(tol.tol > 0.0) {
            errs.push(format!("tolerances: tol must be > 0 (got {})", tol.tol));
        }
        if gamma.depends_on_space() {
            errs.push("gamma must not depend on x".to_string());
        }

        let state = |rate: &Rate| rate.on_grid(&g, Axes::STATE);
        let r_grid = state(&r);
        if let Some((i, j, k)) = first_where(&r_grid, |v| !(v < 1.0)) {
            errs.push(format!("A5 violated: r >= 1 at ({i},{j},{k})"));
        }
        if let Some((i, j, k)) = first_where(&r_grid, |v| !(v > 0.0)) {
            errs.push(format!("A5 violated: r <= 0 at ({i},{j},{k})"));
        }
        for (name, field) in [
            ("mu", state(&mu)),
            ("f", state(&f)),
            ("C", c_inflow.on_grid(&g, Axes::TIME_SPACE)),
            ("p0", p0.on_grid(&g, Axes::SIZE_SPACE)),
        ] {
            if let Some((i, j, k)) = first_where(&field, |v| !(v >= 0.0 && v.is_finite())) {
                errs.push(format!("{name} must be finite and nonnegative, violated at ({i},{j},{k})"));
            }
        }
        let growth = Growth::new(gamma, &g);
        'gamma: for j in 0..=g.nt {
            let t = g.t(j);
            let mut points: Vec<f64> = (0..g.ns).map(|i| g.s(i)).collect();
            points.extend([0.0, g.s_f]);
            for s in points {
                let v = growth.gamma(s, t);
                if !(v >= 0.0 && v.is_finite()) {
                    errs.push(format!("A1 violated: gamma({s}, {t}) = {v} is not finite and nonnegative"));
                    break 'gamma;
                }
            }
        }

        let phi_l_f = phi_l.on_grid(&g, Axes::CONTROL);
        let phi_m_f = phi_m.on_grid(&g, Axes::CONTROL);
        if let Some((i, j, k)) = first_where(&phi_l_f, |v| !(v >= 0.0 && v.is_finite())) {
            errs.push(format!("bounds: phi_l must be finite and >= 0, violated at ({i},{j},{k})"));
        }
        if let Some(p) = (0..phi_l_f.len()).find(|&p| !(phi_l_f.values()[p] <= phi_m_f.values()[p])) {
            let (i, j, k) = phi_l_f.unindex(p);
            errs.push(format!("bounds violated: phi_l > phi_m at ({i},{j},{k})"));
        }

        let growth_case = match classify_growth_case(&growth, &g) {
            Ok(c) => Some(c),
            Err(e) => {
                errs.push(e.to_string());
                None
            }
        };
        if !errs.is_empty() {
            return Err(Error::Invalid(errs));
        }
        let p0_field = p0.on_grid(&g, Axes::SIZE_SPACE);
        Ok(ValidatedScenario {
            scenario: sc,
            rates: ResolvedRates {
                growth,
                mu,
                r,
                f,
                c_inflow,
            },
            growth_case: growth_case.expect("checked above"),
            p0: p0_field,
            phi_l: phi_l_f,
            phi_m: phi_m_f,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Returns a copy with a different cost parametrization (no revalidation needed).
    pub fn with_cost(&self, cost: CostParams) -> Result<Self> {
        if !(cost.rho > 0.0 && cost.c > 0.0) {
            return Err(Error::invalid("cost: rho and c must be > 0"));
        }
        let mut out = self.clone();
        out.scenario.cost = cost;
        Ok(out)
    }

    pub fn with_tolerances(&self, tolerances: Tolerances) -> Self {
        let mut out = self.clone();
        out.scenario.tolerances = tolerances;
        out
    }

    /// Returns a copy with a different initial density.
    pub fn with_p0(&self, p0: Field) -> Result<Self> {
        if p0.grid() != &self.grid || p0.axes() != Axes::SIZE_SPACE {
            return Err(Error::Layout("p0 must be a size x space field on the scenario grid".into()));
        }
        if p0.values().iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("p0 must be finite and nonnegative"));
        }
        let mut out = self.clone();
        out.scenario.rates.p0 = RateSpec::Table(p0.values().to_vec());
        out.p0 = p0;
        Ok(out)
    }

    /// Checks that `beta` is a control on this grid within the bounds.
    pub fn check_control(&self, beta: &Field) -> Result<Field> {
        if beta.grid() != &self.grid {
            return Err(Error::Layout("control grid differs from scenario grid".into()));
        }
        let full = beta.broadcast(Axes::CONTROL)?;
        let slack = 1e-12;
        for p in 0..full.len() {
            let v = full.values()[p];
            if !(v >= self.phi_l.values()[p] - slack && v <= self.phi_m.values()[p] + slack) {
                let (i, j, k) = full.unindex(p);
                return Err(Error::invalid(format!(
                    "control outside bounds at ({i},{j},{k}): {v} not in [{}, {}]",
                    self.phi_l.values()[p],
                    self.phi_m.values()[p]
                )));
            }
        }
        Ok(full)
    }
}

fn first_where(f: &Field, pred: impl Fn(f64) -> bool) -> Option<(usize, usize, usize)> {
    f.values().iter().position(|&v| pred(v)).map(|p| f.unindex(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        let mut sc = Scenario::new(Grid3::unit(4, 4, 3));
        sc.rates.mu = 0.1.into();
        sc
    }

    #[test]
    fn constant_scenario_is_accepted() {
        let v = base().validate().unwrap();
        assert_eq!(v.growth_case, GrowthCase::A);
        assert_eq!(v.phi_m.shape(), [4, 4, 3]);
    }

    #[test]
    fn r_equal_one_violates_a5() {
        let mut sc = base();
        sc.rates.r = 1.0.into();
        let err = sc.validate().unwrap_err().to_string();
        assert!(err.contains("A5 violated: r >= 1 at (0,0,0)"), "{err}");
    }

    #[test]
    fn inverted_bounds_rejected() {
        let mut sc = base();
        sc.bounds = ControlBounds::constant(0.5, 0.2);
        let err = sc.validate().unwrap_err().to_string();
        assert!(err.contains("phi_l > phi_m"), "{err}");
    }

    #[test]
    fn all_violations_reported() {
        let mut sc = base();
        sc.k = 0.0;
        sc.rates.mu = (-1.0).into();
        sc.rates.r = 0.0.into();
        match sc.validate().unwrap_err() {
            Error::Invalid(errs) => assert_eq!(errs.len(), 3, "{errs:?}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn control_bounds_check() {
        let v = base().validate().unwrap();
        let g = v.grid;
        assert!(v.check_control(&Field::constant(g, Axes::NONE, 0.5)).is_ok());
        assert!(v.check_control(&Field::constant(g, Axes::NONE, 1.5)).is_err());
    }
}
