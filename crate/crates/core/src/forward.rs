//! Forward solver for the state equation.
//!
//! Each time step applies, in order: the renewal condition at `t_j`, transport
//! along characteristics with exponential reaction, and one backward-Euler
//! step of Neumann diffusion in space.
//!
//! Transport is a conservative remap: the faces of every size cell are traced
//! back one step, and the new cell mass is the old (piecewise constant) mass
//! on the departure interval. Where the departure interval reaches below
//! `s = 0` the cell receives newborns instead, in proportion to the span of
//! times at which its characteristics crossed `s = 0`. The remap is linear in
//! the state, which is what makes the exact transpose in
//! [`crate::adjoint`] possible.

use crate::characteristics::GrowthCase;
use crate::error::{Error, Result};
use crate::field::{Axes, CompensatedSum, Field};
use crate::grid::Grid3;
use crate::scenario::ValidatedScenario;

/// Output of [`solve_state`].
#[derive(Debug, Clone)]
pub struct StateSolution {
    /// Density `p(s_i, t_j, x_k)`.
    pub p: Field,
    /// Newborn density `p(0, t_j, x_k)`; zero in growth cases c/d.
    pub newborn_density: Field,
    /// `P(t_j)`, integral of `p` over size and space.
    pub total_population: Vec<f64>,
}

impl StateSolution {
    /// Slice of `p` at time node `j`, laid out as `i * nx + k`.
    pub fn slice(&self, j: usize) -> Vec<f64> {
        time_slice(&self.p, j)
    }
}

pub(crate) fn time_slice(f: &Field, j: usize) -> Vec<f64> {
    let [ns, _, nx] = f.shape();
    let mut out = Vec::with_capacity(ns * nx);
    for i in 0..ns {
        for k in 0..nx {
            out.push(f.get(i, j, k));
        }
    }
    out
}

pub(crate) fn set_time_slice(f: &mut Field, j: usize, v: &[f64]) {
    let [ns, _, nx] = f.shape();
    for i in 0..ns {
        for k in 0..nx {
            f.set(i, j, k, v[i * nx + k]);
        }
    }
}

/// Backward-Euler Neumann diffusion matrix `I - k dt L` with ghost-point
/// boundary rows, factored for the Thomas algorithm.
#[derive(Debug, Clone)]
pub struct NeumannDiffusion {
    n: usize,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl NeumannDiffusion {
    pub fn new(nx: usize, k: f64, dt: f64, dx: f64) -> Self {
        let kappa = k * dt / (dx * dx);
        let mut sub = vec![-kappa; nx];
        let diag = vec![1.0 + 2.0 * kappa; nx];
        let mut sup = vec![-kappa; nx];
        if nx > 1 {
            sub[0] = 0.0;
            sup[nx - 1] = 0.0;
            sup[0] = -2.0 * kappa;
            sub[nx - 1] = -2.0 * kappa;
        }
        NeumannDiffusion { n: nx, sub, diag, sup }
    }

    pub fn for_grid(grid: &Grid3, k: f64) -> Self {
        NeumannDiffusion::new(grid.nx, k, grid.dt(), grid.dx())
    }

    /// Solves `M y = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        if self.n == 1 {
            return;
        }
        thomas(&self.sub, &self.diag, &self.sup, b);
    }

    /// Solves `M^T y = b` in place.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        if self.n == 1 {
            return;
        }
        let n = self.n;
        // (M^T)_{k,k-1} = M_{k-1,k}, (M^T)_{k,k+1} = M_{k+1,k}
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        sub[1..].copy_from_slice(&self.sup[..n - 1]);
        sup[..n - 1].copy_from_slice(&self.sub[1..]);
        thomas(&sub, &self.diag, &sup, b);
    }

    /// Dense copy of the matrix (row-major), for tests and diagnostics.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for r in 0..n {
            m[r * n + r] = self.diag[r];
            if r > 0 {
                m[r * n + r - 1] = self.sub[r];
            }
            if r + 1 < n {
                m[r * n + r + 1] = self.sup[r];
            }
        }
        if n == 1 {
            m[0] = 1.0;
        }
        m
    }
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], b: &mut [f64]) {
    let n = b.len();
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = sup[0] / denom;
    b[0] /= denom;
    for k in 1..n {
        denom = diag[k] - sub[k] * c[k - 1];
        c[k] = sup[k] / denom;
        b[k] = (b[k] - sub[k] * b[k - 1]) / denom;
    }
    for k in (0..n - 1).rev() {
        b[k] -= c[k] * b[k + 1];
    }
}

/// One backward-Euler Neumann diffusion step applied to every size cell.
pub fn step_diffusion(p_tilde: &Field, k: f64, dt: f64) -> Result<Field> {
    let grid = *p_tilde.grid();
    if !(k > 0.0) {
        return Err(Error::invalid("diffusion coefficient must be > 0"));
    }
    let axes = p_tilde.axes();
    if !axes.space || axes.time.is_some() {
        return Err(Error::Layout("step_diffusion expects a size x space or space field".into()));
    }
    let diff = NeumannDiffusion::new(grid.nx, k, dt, grid.dx());
    let mut out = p_tilde.clone();
    let nx = grid.nx;
    for row in out.values_mut().chunks_mut(nx) {
        diff.solve(row);
    }
    Ok(out)
}

/// Remap data of one time step.
#[derive(Debug, Clone)]
struct StepPlan {
    /// CSR rows: destination cell `i` takes `weights[q] * p[cols[q]]`.
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    /// Crossing-time span of newborns landing in cell `i`, divided by `ds`.
    inflow: Vec<f64>,
    /// Per `(i, k)`: reaction factor for resident mass.
    resident_decay: Vec<f64>,
    /// Per `(i, k)`: reaction factor for newborn mass.
    inflow_decay: Vec<f64>,
    /// Per `(i, k)`: `f dt` at the characteristic midpoint.
    source: Vec<f64>,
}

/// The discretized state operator of a scenario: everything in a time step
/// that does not depend on the control.
#[derive(Debug, Clone)]
pub struct StateOperator {
    grid: Grid3,
    case: GrowthCase,
    plans: Vec<StepPlan>,
    diffusion: NeumannDiffusion,
    /// `r(s_i, t_j, x_k) ds`, per step, laid out `i * nx + k`.
    r_ds: Vec<Vec<f64>>,
    /// `C(t_j, x_k)` per time node.
    c_inflow: Vec<Vec<f64>>,
    /// `gamma(0, t_j)` per time node.
    gamma0: Vec<f64>,
    p0: Vec<f64>,
    flip_adjoint_renewal: bool,
}

impl StateOperator {
    pub fn new(sc: &ValidatedScenario) -> Result<Self> {
        let g = sc.grid;
        let (ns, nx) = (g.ns, g.nx);
        let rates = &sc.rates;
        let growth = &rates.growth;
        let case = sc.growth_case;
        let ds = g.ds();
        let mut plans = Vec::with_capacity(g.nt);
        for j in 0..g.nt {
            let (t0, t1) = (g.t(j), g.t(j + 1));
            // departure points and crossing times of the cell faces
            let mut foot = Vec::with_capacity(ns + 1);
            let mut cross = Vec::with_capacity(ns + 1);
            for i in 0..=ns {
                let sf = g.s_face(i);
                let a = if i == 0 && case.has_renewal() {
                    -1.0
                } else {
                    growth.trace(t1, sf, t0)
                };
                if a < 0.0 && case.has_renewal() {
                    let tau = if i == 0 { t1 } else { growth.crossing_time(t1, sf, t0)? };
                    foot.push(0.0);
                    cross.push(tau);
                } else {
                    foot.push(a.clamp(0.0, g.s_f));
                    cross.push(t0);
                }
            }
            let mut offsets = vec![0];
            let mut cols = Vec::new();
            let mut weights = Vec::new();
            let mut inflow = Vec::with_capacity(ns);
            let mut resident_decay = Vec::with_capacity(ns * nx);
            let mut inflow_decay = Vec::with_capacity(ns * nx);
            let mut source = Vec::with_capacity(ns * nx);
            for i in 0..ns {
                let (lo, hi) = (foot[i], foot[i + 1].max(foot[i]));
                if hi > lo {
                    let first = ((lo / ds).floor() as usize).min(ns - 1);
                    let last = (((hi / ds).ceil() as usize).max(1) - 1).min(ns - 1);
                    for c in first..=last {
                        let overlap = (hi.min(g.s_face(c + 1)) - lo.max(g.s_face(c))).max(0.0);
                        if overlap > 0.0 {
                            cols.push(c);
                            weights.push(overlap / ds);
                        }
                    }
                }
                offsets.push(cols.len());
                let span = (cross[i] - cross[i + 1]).max(0.0);
                inflow.push(span / ds);

                let t_mid = 0.5 * (t0 + t1);
                let s_mid = growth.trace(t1, g.s(i), t_mid).clamp(0.0, g.s_f);
                let tau_bar = 0.5 * (cross[i] + cross[i + 1]);
                let dt_in = t1 - tau_bar;
                let t_mid_in = 0.5 * (tau_bar + t1);
                let s_mid_in = growth.trace(tau_bar, 0.0, t_mid_in).clamp(0.0, g.s_f);
                for k in 0..nx {
                    let x = g.x(k);
                    resident_decay.push((-rates.mu.eval(s_mid, t_mid, x) * g.dt()).exp());
                    inflow_decay.push((-rates.mu.eval(s_mid_in, t_mid_in, x) * dt_in).exp());
                    source.push(rates.f.eval(s_mid, t_mid, x) * g.dt());
                }
            }
            plans.push(StepPlan {
                offsets,
                cols,
                weights,
                inflow,
                resident_decay,
                inflow_decay,
                source,
            });
        }
        let r_ds = (0..g.nt)
            .map(|j| {
                let t = g.t(j);
                let mut v = Vec::with_capacity(ns * nx);
                for i in 0..ns {
                    for k in 0..nx {
                        v.push(rates.r.eval(g.s(i), t, g.x(k)) * ds);
                    }
                }
                v
            })
            .collect();
        let c_inflow = (0..=g.nt)
            .map(|j| (0..nx).map(|k| rates.c_inflow.eval(0.0, g.t(j), g.x(k))).collect())
            .collect();
        let gamma0 = (0..=g.nt).map(|j| growth.gamma(0.0, g.t(j))).collect();
        Ok(StateOperator {
            grid: g,
            case,
            plans,
            diffusion: NeumannDiffusion::for_grid(&g, sc.k),
            r_ds,
            c_inflow,
            gamma0,
            p0: time_slice(&sc.p0, 0),
            flip_adjoint_renewal: false,
        })
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn growth_case(&self) -> GrowthCase {
        self.case
    }

    pub fn diffusion(&self) -> &NeumannDiffusion {
        &self.diffusion
    }

    /// Test hook: corrupt the renewal term of the transposed step.
    #[doc(hidden)]
    pub fn with_adjoint_fault(mut self, on: bool) -> Self {
        self.flip_adjoint_renewal = on;
        self
    }

    /// Birth integral `int r beta p ds` at step `j` for each spatial node.
    pub fn birth_integral(&self, j: usize, p: &[f64], beta: &Field) -> Vec<f64> {
        let (ns, nx) = (self.grid.ns, self.grid.nx);
        let mut out = vec![0.0; nx];
        if !self.case.has_renewal() {
            return out;
        }
        let r_ds = &self.r_ds[j.min(self.grid.nt - 1)];
        let jb = j.min(self.grid.nt - 1);
        for i in 0..ns {
            for k in 0..nx {
                out[k] += r_ds[i * nx + k] * beta.get(i, jb, k) * p[i * nx + k];
            }
        }
        out
    }

    /// Renewal numerator `C + int r beta p ds` at time node `j`.
    pub fn renewal_flux(&self, j: usize, p: &[f64], beta: &Field) -> Vec<f64> {
        if !self.case.has_renewal() {
            return vec![0.0; self.grid.nx];
        }
        let mut flux = self.birth_integral(j, p, beta);
        for (v, c) in flux.iter_mut().zip(&self.c_inflow[j]) {
            *v += c;
        }
        flux
    }

    /// Newborn density `p(0, t_j, x)`.
    pub fn newborns(&self, j: usize, p: &[f64], beta: &Field) -> Vec<f64> {
        if !self.case.has_renewal() {
            return vec![0.0; self.grid.nx];
        }
        let g0 = self.gamma0[j];
        self.renewal_flux(j, p, beta).into_iter().map(|v| v / g0).collect()
    }

    /// Transport and reaction over step `j`, given the renewal flux.
    /// With `affine = false` the sources `f` are dropped.
    pub fn transport(&self, j: usize, p: &[f64], flux: &[f64], affine: bool) -> Vec<f64> {
        let (ns, nx) = (self.grid.ns, self.grid.nx);
        let plan = &self.plans[j];
        let mut out = vec![0.0; ns * nx];
        for i in 0..ns {
            let row = plan.offsets[i]..plan.offsets[i + 1];
            for k in 0..nx {
                let idx = i * nx + k;
                let mut resident = 0.0;
                for q in row.clone() {
                    resident += plan.weights[q] * p[plan.cols[q] * nx + k];
                }
                let mut v = plan.resident_decay[idx] * resident
                    + plan.inflow_decay[idx] * plan.inflow[i] * flux[k];
                if affine {
                    v += plan.source[idx];
                }
                out[idx] = v;
            }
        }
        out
    }

    pub fn diffuse(&self, p: &mut [f64]) {
        for row in p.chunks_mut(self.grid.nx) {
            self.diffusion.solve(row);
        }
    }

    /// Full (affine) step `p_j -> p_{j+1}`.
    pub fn step(&self, j: usize, p: &[f64], beta: &Field) -> Vec<f64> {
        let flux = self.renewal_flux(j, p, beta);
        let mut next = self.transport(j, p, &flux, true);
        self.diffuse(&mut next);
        next
    }

    /// Linear part of step `j`: no inflow `C` and no source `f`.
    pub fn step_linear(&self, j: usize, u: &[f64], beta: &Field) -> Vec<f64> {
        let flux = self.birth_integral(j, u, beta);
        let mut next = self.transport(j, u, &flux, false);
        self.diffuse(&mut next);
        next
    }

    /// Linear step driven by an extra renewal flux (no own sources).
    pub(crate) fn step_linear_forced(&self, j: usize, u: &[f64], beta: &Field, extra_flux: &[f64]) -> Vec<f64> {
        let mut flux = self.birth_integral(j, u, beta);
        for (a, b) in flux.iter_mut().zip(extra_flux) {
            *a += b;
        }
        let mut next = self.transport(j, u, &flux, false);
        self.diffuse(&mut next);
        next
    }

    /// Exact transpose of [`StateOperator::step_linear`].
    ///
    /// Returns `A_j^T v` and the derivative of `<v, A_j u>` with respect to
    /// the renewal flux at each spatial node.
    pub fn step_transpose(&self, j: usize, v: &[f64], beta: &Field) -> (Vec<f64>, Vec<f64>) {
        let (ns, nx) = (self.grid.ns, self.grid.nx);
        let plan = &self.plans[j];
        let mut w = v.to_vec();
        for row in w.chunks_mut(nx) {
            self.diffusion.solve_transpose(row);
        }
        let mut y = vec![0.0; ns * nx];
        let mut flux_price = vec![0.0; nx];
        for i in 0..ns {
            let row = plan.offsets[i]..plan.offsets[i + 1];
            for k in 0..nx {
                let idx = i * nx + k;
                let wr = plan.resident_decay[idx] * w[idx];
                for q in row.clone() {
                    y[plan.cols[q] * nx + k] += plan.weights[q] * wr;
                }
                flux_price[k] += plan.inflow_decay[idx] * plan.inflow[i] * w[idx];
            }
        }
        if self.case.has_renewal() {
            let r_ds = &self.r_ds[j];
            let sign = if self.flip_adjoint_renewal { -1.0 } else { 1.0 };
            for i in 0..ns {
                for k in 0..nx {
                    y[i * nx + k] += sign * r_ds[i * nx + k] * beta.get(i, j, k) * flux_price[k];
                }
            }
        } else {
            flux_price.iter_mut().for_each(|v| *v = 0.0);
        }
        (y, flux_price)
    }

    /// `r(s_i, t_j, x_k) ds` for step `j`.
    pub fn r_ds(&self, j: usize) -> &[f64] {
        &self.r_ds[j]
    }

    /// Marches the state equation forward under control `beta`.
    pub fn solve(&self, beta: &Field) -> Result<StateSolution> {
        let g = self.grid;
        let mut p = Field::zeros(g, Axes::STATE);
        let mut newborn = Field::zeros(g, Axes::TIME_SPACE);
        let mut current = self.p0.clone();
        set_time_slice(&mut p, 0, &current);
        for j in 0..=g.nt {
            let b = self.newborns(j, &current, beta);
            for (k, v) in b.iter().enumerate() {
                newborn.set(0, j, k, *v);
            }
            if j == g.nt {
                break;
            }
            current = self.step(j, &current, beta);
            if let Some(pos) = current.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "state",
                    i: pos / g.nx,
                    j: j + 1,
                    k: pos % g.nx,
                });
            }
            set_time_slice(&mut p, j + 1, &current);
        }
        let total_population = total_population(&p);
        Ok(StateSolution {
            p,
            newborn_density: newborn,
            total_population,
        })
    }
}

/// Newborn density `p(0, t_j, x)` from a (size, space) slice at time node `j`.
pub fn compute_renewal(sc: &ValidatedScenario, p_slice: &Field, beta: &Field, j: usize) -> Result<Field> {
    let g = sc.grid;
    if !sc.growth_case.has_renewal() {
        return Err(Error::Undefined("renewal undefined in growth case c/d".into()));
    }
    if p_slice.grid() != &g || p_slice.axes() != Axes::SIZE_SPACE {
        return Err(Error::Layout("renewal expects a size x space slice".into()));
    }
    let t = g.t(j);
    let jb = j.min(g.nt - 1);
    let gamma0 = sc.rates.growth.gamma(0.0, t);
    Ok(Field::from_fn(g, Axes::SPACE, |_, _, k| {
        let x = g.x(k);
        let births: f64 = (0..g.ns)
            .map(|i| sc.rates.r.eval(g.s(i), t, x) * beta.get(i, jb, k) * p_slice.get(i, 0, k) * g.ds())
            .sum();
        (sc.rates.c_inflow.eval(0.0, t, x) + births) / gamma0
    }))
}

/// Transport and reaction from `t_j` to `t_{j+1}` (before diffusion).
pub fn step_transport_reaction(sc: &ValidatedScenario, p_j: &Field, beta: &Field, j: usize) -> Result<Field> {
    let op = StateOperator::new(sc)?;
    let g = sc.grid;
    if p_j.axes() != Axes::SIZE_SPACE || p_j.grid() != &g {
        return Err(Error::Layout("transport expects a size x space slice".into()));
    }
    let flux = op.renewal_flux(j, p_j.values(), beta);
    Field::from_values(g, Axes::SIZE_SPACE, op.transport(j, p_j.values(), &flux, true))
}

/// Solves the state equation for control `beta`.
pub fn solve_state(sc: &ValidatedScenario, beta: &Field) -> Result<StateSolution> {
    let beta = sc.check_control(beta)?;
    StateOperator::new(sc)?.solve(&beta)
}

/// `P(t_j)`: midpoint rule in size, trapezoid rule in space.
pub fn total_population(p: &Field) -> Vec<f64> {
    let g = *p.grid();
    let [ns, nt, nx] = p.shape();
    (0..nt)
        .map(|j| {
            let mut acc = CompensatedSum::default();
            for i in 0..ns {
                for k in 0..nx {
                    acc.add(p.get(i, j, k) * g.wx(k));
                }
            }
            acc.value() * g.ds()
        })
        .collect()
}
