//! Simulation, adjoint sensitivities and optimal birth control for a
//! size-structured population diffusing on a one-dimensional habitat.
//!
//! The state `p(s, t, x)` solves
//!
//! ```text
//! p_t + (gamma p)_s = k p_xx - mu p + f
//! gamma(0,t) p(0,t,x) = C(t,x) + int r beta p ds
//! p_x = 0 on the spatial boundary,  p(s,0,x) = p0(s,x)
//! ```
//!
//! and the control `beta` is chosen inside a box to minimize
//! `J = int [p -/+ rho/2 beta^2]`.

pub mod adjoint;
pub mod characteristics;
pub mod error;
pub mod field;
pub mod forward;
pub mod grid;
pub mod io;
pub mod optimizer;
pub mod oracles;
pub mod presets;
pub mod rates;
pub mod scenario;

pub use adjoint::{solve_adjoint, AdjointSolution, SensitivitySolution};
pub use error::{Error, Result};
pub use field::{Axes, Field, TimeAxis};
pub use forward::{solve_state, StateOperator, StateSolution};
pub use grid::Grid3;
pub use scenario::{CostParams, Scenario, SignVariant, ValidatedScenario};
