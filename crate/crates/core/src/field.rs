//! Dense scalar fields on (a subset of) the grid axes.
//!
//! Values are stored row-major in (size, time, space) order over the active
//! axes only. Indexing with `(i, j, k)` ignores the coordinates of inactive
//! axes, so a field without a size axis broadcasts along size.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::grid::Grid3;

/// How a field samples the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeAxis {
    /// `nt + 1` samples at `t_j`, `j = 0..=nt` (state-like quantities).
    Nodes,
    /// `nt` samples, one per step `[t_j, t_{j+1})` (controls).
    Steps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Axes {
    pub size: bool,
    pub time: Option<TimeAxis>,
    pub space: bool,
}

impl Axes {
    pub const NONE: Axes = Axes::new(false, None, false);
    /// Full (size, time-nodes, space) layout of the state and adjoint.
    pub const STATE: Axes = Axes::new(true, Some(TimeAxis::Nodes), true);
    /// Full (size, time-steps, space) layout of controls.
    pub const CONTROL: Axes = Axes::new(true, Some(TimeAxis::Steps), true);
    pub const SIZE_SPACE: Axes = Axes::new(true, None, true);
    pub const SIZE_TIME: Axes = Axes::new(true, Some(TimeAxis::Nodes), false);
    pub const TIME_SPACE: Axes = Axes::new(false, Some(TimeAxis::Nodes), true);
    pub const STEP_SPACE: Axes = Axes::new(false, Some(TimeAxis::Steps), true);
    pub const SPACE: Axes = Axes::new(false, None, true);

    pub const fn new(size: bool, time: Option<TimeAxis>, space: bool) -> Self {
        Axes { size, time, space }
    }

    pub fn shape(&self, grid: &Grid3) -> [usize; 3] {
        [
            if self.size { grid.ns } else { 1 },
            match self.time {
                Some(TimeAxis::Nodes) => grid.nt + 1,
                Some(TimeAxis::Steps) => grid.nt,
                None => 1,
            },
            if self.space { grid.nx } else { 1 },
        ]
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if self.size {
            parts.push("size");
        }
        match self.time {
            Some(TimeAxis::Nodes) => parts.push("time"),
            Some(TimeAxis::Steps) => parts.push("time-steps"),
            None => {}
        }
        if self.space {
            parts.push("space");
        }
        if parts.is_empty() {
            "scalar".into()
        } else {
            parts.join("x")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid3,
    axes: Axes,
    shape: [usize; 3],
    values: Vec<f64>,
}

impl Field {
    pub fn constant(grid: Grid3, axes: Axes, value: f64) -> Self {
        let shape = axes.shape(&grid);
        Field {
            grid,
            axes,
            shape,
            values: vec![value; shape.iter().product()],
        }
    }

    pub fn zeros(grid: Grid3, axes: Axes) -> Self {
        Field::constant(grid, axes, 0.0)
    }

    pub fn from_values(grid: Grid3, axes: Axes, values: Vec<f64>) -> Result<Self> {
        let shape = axes.shape(&grid);
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::Shape {
                key: axes.describe(),
                expected,
                got: values.len(),
            });
        }
        Ok(Field {
            grid,
            axes,
            shape,
            values,
        })
    }

    /// Builds a field from a function of the *indices* `(i, j, k)`.
    pub fn from_fn(grid: Grid3, axes: Axes, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let shape = axes.shape(&grid);
        let mut values = Vec::with_capacity(shape.iter().product());
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    values.push(f(i, j, k));
                }
            }
        }
        Field {
            grid,
            axes,
            shape,
            values,
        }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn axes(&self) -> Axes {
        self.axes
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Flat index of `(i, j, k)`; inactive axes are ignored.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [_, nt, nx] = self.shape;
        let i = if self.axes.size { i } else { 0 };
        let j = if self.axes.time.is_some() { j } else { 0 };
        let k = if self.axes.space { k } else { 0 };
        (i * nt + j) * nx + k
    }

    /// Inverse of [`Field::index`] over the active shape.
    pub fn unindex(&self, flat: usize) -> (usize, usize, usize) {
        let [_, nt, nx] = self.shape;
        (flat / (nt * nx), (flat / nx) % nt, flat % nx)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.values[idx] = v;
    }

    /// Copy of the field expanded onto `axes` (which must contain the own axes).
    pub fn broadcast(&self, axes: Axes) -> Result<Field> {
        let ok_time = match (self.axes.time, axes.time) {
            (None, _) => true,
            (Some(a), Some(b)) => a == b,
            (Some(_), None) => false,
        };
        if (self.axes.size && !axes.size) || (self.axes.space && !axes.space) || !ok_time {
            return Err(Error::Layout(format!(
                "cannot broadcast {} onto {}",
                self.axes.describe(),
                axes.describe()
            )));
        }
        Ok(Field::from_fn(self.grid, axes, |i, j, k| self.get(i, j, k)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_same(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid || self.axes != other.axes {
            return Err(Error::Layout(format!(
                "fields differ in grid or axes ({} vs {})",
                self.axes.describe(),
                other.axes.describe()
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &Field) -> Result<Field> {
        self.check_same(other)?;
        Ok(Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + scale * b)
                .collect(),
            ..self.clone()
        })
    }

    /// First index holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(usize, usize, usize)> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| self.unindex(p))
    }

    /// Multilinear interpolation at physical coordinates.
    ///
    /// Size is interpolated between cell centers, time between nodes (or
    /// piecewise constant per step), space between nodes. Outside the
    /// sampled range the nearest sample is used.
    pub fn sample(&self, s: f64, t: f64, x: f64) -> f64 {
        let g = &self.grid;
        let (i0, i1, wi) = if self.axes.size {
            bracket(s / g.ds() - 0.5, g.ns)
        } else {
            (0, 0, 0.0)
        };
        let (j0, j1, wj) = match self.axes.time {
            Some(TimeAxis::Nodes) => bracket(t / g.dt(), g.nt + 1),
            Some(TimeAxis::Steps) => {
                let j = ((t / g.dt()).floor().max(0.0) as usize).min(g.nt - 1);
                (j, j, 0.0)
            }
            None => (0, 0, 0.0),
        };
        let (k0, k1, wk) = if self.axes.space && g.nx > 1 {
            bracket(x / g.dx(), g.nx)
        } else {
            (0, 0, 0.0)
        };
        let mut acc = 0.0;
        for (i, a) in [(i0, 1.0 - wi), (i1, wi)] {
            if a == 0.0 {
                continue;
            }
            for (j, b) in [(j0, 1.0 - wj), (j1, wj)] {
                if b == 0.0 {
                    continue;
                }
                for (k, c) in [(k0, 1.0 - wk), (k1, wk)] {
                    if c == 0.0 {
                        continue;
                    }
                    acc += a * b * c * self.get(i, j, k);
                }
            }
        }
        acc
    }

    /// Writes `s,t,x,value` rows; coordinates of inactive axes are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "s,t,x,value")?;
        let g = self.grid;
        let mut line = String::new();
        for flat in 0..self.values.len() {
            let (i, j, k) = self.unindex(flat);
            line.clear();
            if self.axes.size {
                write!(line, "{:.16e}", g.s(i)).unwrap();
            }
            line.push(',');
            if self.axes.time.is_some() {
                write!(line, "{:.16e}", g.t(j)).unwrap();
            }
            line.push(',');
            if self.axes.space {
                write!(line, "{:.16e}", g.x(k)).unwrap();
            }
            write!(line, ",{:.16e}", self.values[flat]).unwrap();
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads a field written by [`Field::write_csv`] on the same grid.
    ///
    /// Active axes are recovered from which coordinate columns are filled;
    /// the time layout from the number of rows.
    pub fn read_csv<R: BufRead>(r: R, grid: Grid3) -> Result<Field> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty field csv".into()))??;
        if header.trim() != "s,t,x,value" {
            return Err(Error::Config(format!("unexpected csv header `{header}`")));
        }
        let mut values = Vec::new();
        let mut filled: Option<[bool; 3]> = None;
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Config(format!("csv line {}: expected 4 columns", n + 2)));
            }
            let this = [!cols[0].is_empty(), !cols[1].is_empty(), !cols[2].is_empty()];
            match filled {
                None => filled = Some(this),
                Some(f) if f != this => {
                    return Err(Error::Config(format!(
                        "csv line {}: inconsistent coordinate columns",
                        n + 2
                    )))
                }
                _ => {}
            }
            let v: f64 = cols[3]
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("csv line {}: {e}", n + 2)))?;
            values.push(v);
        }
        let [has_s, has_t, has_x] = filled.unwrap_or([false; 3]);
        let time = if has_t {
            let base = (if has_s { grid.ns } else { 1 }) * (if has_x { grid.nx } else { 1 });
            if values.len() == base * (grid.nt + 1) {
                Some(TimeAxis::Nodes)
            } else {
                Some(TimeAxis::Steps)
            }
        } else {
            None
        };
        Field::from_values(grid, Axes::new(has_s, time, has_x), values)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf8")
    }
}

/// Linear-interpolation bracket of fractional index `u` among `n` samples.
fn bracket(u: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 || u <= 0.0 || u.is_nan() {
        return (0, 0, 0.0);
    }
    let last = (n - 1) as f64;
    if u >= last {
        return (n - 1, n - 1, 0.0);
    }
    let lo = u.floor() as usize;
    (lo, lo + 1, u - lo as f64)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn broadcast_ignores_inactive_axes() {
        let g = Grid3::unit(3, 4, 2);
        let f = Field::from_fn(g, Axes::SPACE, |_, _, k| k as f64);
        assert_eq!(f.len(), 2);
        assert_eq!(f.get(2, 3, 1), 1.0);
        let full = f.broadcast(Axes::STATE).unwrap();
        assert_eq!(full.shape(), [3, 5, 2]);
        assert_eq!(full.get(1, 4, 1), 1.0);
        assert!(full.broadcast(Axes::SPACE).is_err());
    }

    #[test]
    fn sample_hits_grid_values() {
        let g = Grid3::unit(4, 4, 3);
        let f = Field::from_fn(g, Axes::STATE, |i, j, k| (i * 100 + j * 10 + k) as f64);
        assert_eq!(f.sample(g.s(2), g.t(3), g.x(1)), 231.0);
        // midway between size centers 1 and 2
        let mid = 0.5 * (g.s(1) + g.s(2));
        assert!((f.sample(mid, g.t(0), g.x(0)) - 150.0).abs() < 1e-12);
        // clamped below the first center
        assert_eq!(f.sample(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn steps_layout_is_piecewise_constant() {
        let g = Grid3::unit(2, 4, 1);
        let f = Field::from_fn(g, Axes::STEP_SPACE, |_, j, _| j as f64);
        assert_eq!(f.len(), 4);
        assert_eq!(f.sample(0.0, 0.49, 0.0), 1.0);
        assert_eq!(f.sample(0.0, 1.0, 0.0), 3.0);
    }

    #[test]
    fn csv_layout_and_header() {
        let g = Grid3::unit(2, 2, 2);
        let f = Field::constant(g, Axes::TIME_SPACE, 0.5);
        let text = f.to_csv_string();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("s,t,x,value"));
        assert!(lines.next().unwrap().starts_with(','));
        assert_eq!(text.lines().count(), 1 + 3 * 2);
    }

    fn arb_axes() -> impl Strategy<Value = Axes> {
        (any::<bool>(), 0u8..3, any::<bool>()).prop_map(|(s, t, x)| {
            let time = match t {
                0 => None,
                1 => Some(TimeAxis::Nodes),
                _ => Some(TimeAxis::Steps),
            };
            Axes::new(s, time, x)
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            ns in 2usize..5, nt in 2usize..5, nx in 1usize..4,
            axes in arb_axes(),
            seed in proptest::collection::vec(-1e300f64..1e300, 1..8),
        ) {
            let g = Grid3::unit(ns, nt, nx);
            let f = Field::from_fn(g, axes, |i, j, k| {
                let v = seed[(i + 3 * j + 7 * k) % seed.len()];
                v / (1.0 + (i + j + k) as f64).powi(3)
            });
            let back = Field::read_csv(f.to_csv_string().as_bytes(), g).unwrap();
            prop_assert_eq!(back.axes(), f.axes());
            for (a, b) in back.values().iter().zip(f.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn index_maps_are_bijective(ns in 2usize..6, nt in 2usize..6, nx in 1usize..6, axes in arb_axes()) {
            let g = Grid3::unit(ns, nt, nx);
            let f = Field::zeros(g, axes);
            let [a, b, c] = f.shape();
            let mut seen = vec![false; f.len()];
            for i in 0..a { for j in 0..b { for k in 0..c {
                let flat = f.index(i, j, k);
                prop_assert!(!seen[flat]);
                seen[flat] = true;
                prop_assert_eq!(f.unindex(flat), (i, j, k));
            }}}
            prop_assert!(seen.into_iter().all(|s| s));
        }
    }
}
