//! Characteristic curves of the growth field `ds/dt = gamma(s, t)`.
//!
//! The growth rate is continued as a constant outside `[0, s_f]`, so curves
//! can be traced through the size boundaries. Curves are integrated with the
//! classical fourth-order Runge-Kutta scheme using substeps no longer than
//! the grid time step.

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::rates::Rate;

/// Bisection tolerance on times.
pub const TIME_TOL: f64 = 1e-12;

/// Sign pattern of `gamma` at the two size boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthCase {
    /// `gamma(0,t) > 0`, `gamma(s_f,t) > 0`
    A,
    /// `gamma(0,t) > 0`, `gamma(s_f,t) = 0`
    B,
    /// `gamma(0,t) = 0`, `gamma(s_f,t) > 0`
    C,
    /// `gamma(0,t) = 0`, `gamma(s_f,t) = 0`
    D,
}

impl GrowthCase {
    /// Newborns enter through `s = 0`.
    pub fn has_renewal(self) -> bool {
        matches!(self, GrowthCase::A | GrowthCase::B)
    }

    /// Individuals leave through `s = s_f`.
    pub fn has_outflow(self) -> bool {
        matches!(self, GrowthCase::A | GrowthCase::C)
    }

    fn from_signs(inflow: bool, outflow: bool) -> Self {
        match (inflow, outflow) {
            (true, true) => GrowthCase::A,
            (true, false) => GrowthCase::B,
            (false, true) => GrowthCase::C,
            (false, false) => GrowthCase::D,
        }
    }
}

/// The growth rate together with its integration parameters.
#[derive(Debug, Clone)]
pub struct Growth {
    rate: Rate,
    s_f: f64,
    t_final: f64,
    max_step: f64,
}

impl Growth {
    pub fn new(rate: Rate, grid: &Grid3) -> Self {
        Growth {
            rate,
            s_f: grid.s_f,
            t_final: grid.t_final,
            max_step: grid.dt().min(grid.t_final / 1024.0),
        }
    }

    pub fn rate(&self) -> &Rate {
        &self.rate
    }

    pub fn s_f(&self) -> f64 {
        self.s_f
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// `gamma(s, t)` with constant continuation outside `[0, s_f]`.
    #[inline]
    pub fn gamma(&self, s: f64, t: f64) -> f64 {
        self.rate.eval(s.clamp(0.0, self.s_f), t, 0.0)
    }

    /// `d gamma / ds`; zero outside `[0, s_f]`.
    #[inline]
    pub fn dgamma_ds(&self, s: f64, t: f64) -> f64 {
        if (0.0..=self.s_f).contains(&s) {
            self.rate.d_ds(s, t, 0.0)
        } else {
            0.0
        }
    }

    fn substeps(&self, t0: f64, t1: f64) -> (usize, f64) {
        let span = t1 - t0;
        if span == 0.0 {
            return (0, 0.0);
        }
        let n = (span.abs() / self.max_step).ceil().max(1.0) as usize;
        (n, span / n as f64)
    }

    /// `psi(t1; t0, s0)` without clamping to the size domain.
    pub fn trace(&self, t0: f64, s0: f64, t1: f64) -> f64 {
        self.trace_with_divergence(t0, s0, t1).0
    }

    /// Traces from `(t0, s0)` to `t1` and returns the end point together with
    /// `int_{t0}^{t1} dgamma/ds(psi(eta), eta) d eta`, integrated as an
    /// extra Runge-Kutta component.
    ///
    /// A substep that crosses a size boundary, where the continued rate has
    /// a kink, is split at the crossing.
    pub fn trace_with_divergence(&self, t0: f64, s0: f64, t1: f64) -> (f64, f64) {
        let (n, h) = self.substeps(t0, t1);
        let (mut s, mut acc) = (s0, 0.0);
        for m in 0..n {
            let t = t0 + m as f64 * h;
            let (s_new, d) = self.rk4_step(s, t, h);
            if self.inside(s) == self.inside(s_new) {
                s = s_new;
                acc += d;
                continue;
            }
            let wall = if s.max(s_new) > self.s_f { self.s_f } else { 0.0 };
            let side = (s - wall).signum();
            // bisect on the partial step length landing on the wall
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (self.rk4_step(s, t, mid).0 - wall) * side > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let theta = 0.5 * (lo + hi);
            // no divergence accumulates on the piece outside the domain
            let entering = self.inside(s_new);
            let d1 = if entering { 0.0 } else { self.rk4_step(s, t, theta).1 };
            let (s2, d2) = self.rk4_step(wall, t + theta, h - theta);
            s = s2;
            acc += d1 + if entering { d2 } else { 0.0 };
        }
        (s, acc)
    }

    fn inside(&self, s: f64) -> bool {
        (0.0..=self.s_f).contains(&s)
    }

    #[inline]
    fn rk4_step(&self, s: f64, t: f64, h: f64) -> (f64, f64) {
        let th = t + 0.5 * h;
        let k1 = self.gamma(s, t);
        let d1 = self.dgamma_ds(s, t);
        let s2 = s + 0.5 * h * k1;
        let k2 = self.gamma(s2, th);
        let d2 = self.dgamma_ds(s2, th);
        let s3 = s + 0.5 * h * k2;
        let k3 = self.gamma(s3, th);
        let d3 = self.dgamma_ds(s3, th);
        let s4 = s + h * k3;
        let k4 = self.gamma(s4, t + h);
        let d4 = self.dgamma_ds(s4, t + h);
        (
            s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4),
            h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4),
        )
    }

    /// Time in `[lo, t]` at which the curve through `(t, s)` crossed `s = 0`,
    /// i.e. the `tau` with `psi(t; tau, 0) = s`. Requires
    /// `psi(t; lo, 0) >= s`.
    pub fn crossing_time(&self, t: f64, s: f64, lo: f64) -> Result<f64> {
        let g = |tau: f64| self.trace(tau, 0.0, t) - s;
        bisect_decreasing(g, lo, t)
    }
}

/// Classifies the growth case from the signs of `gamma` at `s = 0` and
/// `s = s_f`, which must not change over `[0, T]`.
pub fn classify_growth_case(growth: &Growth, grid: &Grid3) -> Result<GrowthCase> {
    const ZERO: f64 = 1e-14;
    let n = 4 * grid.nt;
    let mut pattern = None;
    for m in 0..=n {
        let t = grid.t_final * m as f64 / n as f64;
        let signs = (growth.gamma(0.0, t) > ZERO, growth.gamma(grid.s_f, t) > ZERO);
        match pattern {
            None => pattern = Some(signs),
            Some(p) if p != signs => {
                return Err(Error::invalid(format!(
                    "growth case not uniform in time (changes at t = {t})"
                )))
            }
            _ => {}
        }
    }
    let (a, b) = pattern.expect("at least one sample");
    Ok(GrowthCase::from_signs(a, b))
}

/// `psi(t_query; t0, s0)` clamped to `[0, s_f]`.
pub fn integrate_characteristic(growth: &Growth, t0: f64, s0: f64, t_query: f64) -> f64 {
    growth.trace(t0, s0, t_query).clamp(0.0, growth.s_f)
}

/// Boundary characteristics `z0(t) = psi(t; 0, 0)` and `z1(t) = psi(t; T, s_f)`
/// sampled on the time nodes.
#[derive(Debug, Clone)]
pub struct BoundaryCurves {
    pub times: Vec<f64>,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
}

impl BoundaryCurves {
    pub fn new(growth: &Growth, grid: &Grid3) -> Self {
        let times: Vec<f64> = (0..=grid.nt).map(|j| grid.t(j)).collect();
        let z0 = times.iter().map(|&t| z0(growth, t)).collect();
        let z1 = times.iter().map(|&t| z1(growth, t)).collect();
        BoundaryCurves { times, z0, z1 }
    }
}

pub fn z0(growth: &Growth, t: f64) -> f64 {
    integrate_characteristic(growth, 0.0, 0.0, t)
}

pub fn z1(growth: &Growth, t: f64) -> f64 {
    integrate_characteristic(growth, growth.t_final, growth.s_f, t)
}

/// Entry time `tau_0(t, s)`: the time at which the curve through `(t, s)`
/// left `s = 0`, or 0 when it started inside the domain.
pub fn entry_time(growth: &Growth, t: f64, s: f64) -> Result<f64> {
    if s >= z0(growth, t) {
        return Ok(0.0);
    }
    let g = |tau: f64| integrate_characteristic(growth, tau, 0.0, t) - s;
    bisect_decreasing(g, 0.0, t)
}

/// Exit time `tau_1(t, s)`: the time at which the curve through `(t, s)`
/// reaches `s = s_f`, or `T` when it stays inside.
pub fn exit_time(growth: &Growth, t: f64, s: f64) -> Result<f64> {
    let horizon = growth.t_final;
    if s < z1(growth, t) || t >= horizon {
        return Ok(horizon);
    }
    let g = |tau: f64| integrate_characteristic(growth, tau, growth.s_f, t) - s;
    bisect_decreasing(g, t, horizon)
}

/// `Q = exp(-int_{t_from}^{t_to} dgamma/ds(psi(eta; t, s), eta) d eta)`.
pub fn decay_factor(growth: &Growth, t_from: f64, t_to: f64, t: f64, s: f64) -> f64 {
    if t_from == t_to {
        return 1.0;
    }
    let start = growth.trace(t, s, t_from);
    let (_, integral) = growth.trace_with_divergence(t_from, start, t_to);
    (-integral).exp()
}

/// Root of a nonincreasing function with `g(lo) >= 0 >= g(hi)`.
fn bisect_decreasing(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (glo, ghi) = (g(lo), g(hi));
    if glo < 0.0 || ghi > 0.0 {
        // Allow for rounding right at the bracket ends.
        if glo.abs() <= 1e-13 {
            return Ok(lo);
        }
        if ghi.abs() <= 1e-13 {
            return Ok(hi);
        }
        return Err(Error::Internal(format!(
            "bisection not bracketing on [{lo}, {hi}]: g = ({glo}, {ghi})"
        )));
    }
    while hi - lo > TIME_TOL {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
