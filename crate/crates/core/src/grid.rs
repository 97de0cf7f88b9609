//! Tensor-product discretization of the (size, time, space) domain.
//!
//! Size is sampled at cell centers `s_i = (i + 1/2) ds`, time at nodes
//! `t_j = j dt` (`j = 0..=nt`) and space at nodes `x_k = k dx`. A grid with
//! a single spatial node describes a spatially homogeneous population.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid3 {
    /// Number of size cells.
    pub ns: usize,
    /// Number of time steps.
    pub nt: usize,
    /// Number of spatial nodes.
    pub nx: usize,
    /// Maximal size.
    pub s_f: f64,
    /// Time horizon.
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Length of the spatial interval.
    #[serde(rename = "L")]
    pub length: f64,
}

impl Grid3 {
    pub fn new(ns: usize, nt: usize, nx: usize, s_f: f64, t_final: f64, length: f64) -> Result<Self> {
        let g = Grid3 {
            ns,
            nt,
            nx,
            s_f,
            t_final,
            length,
        };
        g.check()?;
        Ok(g)
    }

    /// Unit cube `[0,1]^3` with the given resolution.
    pub fn unit(ns: usize, nt: usize, nx: usize) -> Self {
        Grid3::new(ns, nt, nx, 1.0, 1.0, 1.0).expect("unit grid resolution")
    }

    pub fn check(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.ns < 2 {
            errs.push(format!("grid: ns must be >= 2 (got {})", self.ns));
        }
        if self.nt < 2 {
            errs.push(format!("grid: nt must be >= 2 (got {})", self.nt));
        }
        if self.nx < 1 {
            errs.push("grid: nx must be >= 1".to_string());
        }
        for (name, v) in [("s_f", self.s_f), ("T", self.t_final), ("L", self.length)] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("grid: {name} must be positive and finite (got {v})"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(errs))
        }
    }

    pub fn ds(&self) -> f64 {
        self.s_f / self.ns as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    /// Node spacing; for a single node the whole interval is one cell.
    pub fn dx(&self) -> f64 {
        if self.nx > 1 {
            self.length / (self.nx - 1) as f64
        } else {
            self.length
        }
    }

    pub fn s(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.ds()
    }

    /// Lower face of size cell `i` (`i = ns` gives `s_f`).
    pub fn s_face(&self, i: usize) -> f64 {
        i as f64 * self.ds()
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn x(&self, k: usize) -> f64 {
        if self.nx > 1 {
            k as f64 * self.dx()
        } else {
            0.5 * self.length
        }
    }

    /// Trapezoid weight of spatial node `k`.
    pub fn wx(&self, k: usize) -> f64 {
        if self.nx == 1 {
            self.length
        } else if k == 0 || k + 1 == self.nx {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }

    /// Trapezoid weight of time node `j`.
    pub fn wt(&self, j: usize) -> f64 {
        if j == 0 || j == self.nt {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    pub fn n_times(&self) -> usize {
        self.nt + 1
    }

    /// Grid with size and time resolution doubled (space unchanged).
    pub fn refine_size_time(&self) -> Self {
        Grid3 {
            ns: 2 * self.ns,
            nt: 2 * self.nt,
            ..*self
        }
    }
}
