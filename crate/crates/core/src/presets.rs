//! Built-in scenarios used by the oracle suite and the tests.

use crate::grid::Grid3;
use crate::rates::Preset;
use crate::scenario::{ControlBounds, CostParams, Scenario, SignVariant};

pub const NAMES: [&str; 3] = ["smooth", "transport", "tiny"];

/// Smooth scenario with size- and space-dependent rates.
///
/// `p0 = (1 + 2s)(1 + 0.3 cos(pi x))` satisfies the renewal condition at
/// `t = 0` for `beta = 1`, so the state is continuous at `s = 0` for that
/// control.
pub fn smooth(grid: Grid3) -> Scenario {
    let mut sc = Scenario::new(grid);
    sc.rates.gamma = Preset::LinearS { a: 1.0, b: 0.5 }.into();
    sc.rates.mu = Preset::Product(vec![
        Preset::LinearS { a: 0.2, b: 0.3 },
        Preset::CosineX { mean: 1.0, amp: 0.5, mode: 1 },
    ])
    .into();
    sc.rates.r = 0.5.into();
    sc.rates.p0 = Preset::Product(vec![
        Preset::LinearS { a: 1.0, b: 2.0 },
        Preset::CosineX { mean: 1.0, amp: 0.3, mode: 1 },
    ])
    .into();
    sc.k = 0.01;
    sc.bounds = ControlBounds::constant(0.0, 1.0);
    sc.cost = CostParams {
        rho: 10.0,
        c: 1.0,
        sign_variant: SignVariant::Minus,
    };
    sc
}

/// Pure transport: `mu = f = C = 0`, linear growth and a smooth initial
/// profile vanishing at `s = 0`.
pub fn transport(grid: Grid3) -> Scenario {
    let mut sc = Scenario::new(grid);
    sc.rates.gamma = Preset::LinearS { a: 1.0, b: 0.5 }.into();
    sc.rates.p0 = Preset::Product(vec![
        Preset::LinearS { a: 0.0, b: 1.0 },
        Preset::LinearS { a: 1.0, b: -1.0 },
    ])
    .into();
    sc
}

/// Tiny instance with a single spatial node.
pub fn tiny() -> Scenario {
    let g = Grid3::new(3, 3, 1, 1.0, 1.0, 1.0).expect("valid grid");
    let mut sc = smooth(g);
    sc.cost.rho = 1.0;
    sc
}

pub fn by_name(name: &str, grid: Option<Grid3>) -> Option<Scenario> {
    let g = grid.unwrap_or_else(|| Grid3::unit(20, 20, 10));
    match name {
        "smooth" => Some(smooth(g)),
        "transport" => Some(transport(g)),
        "tiny" => Some(tiny()),
        _ => None,
    }
}

/// Scenario with random positive tabulated rates on `grid`.
pub fn random<R: rand::Rng>(grid: Grid3, rng: &mut R) -> Scenario {
    use crate::field::Axes;
    use crate::rates::RateSpec;
    let mut sc = Scenario::new(grid);
    let mut table = |axes: Axes, lo: f64, hi: f64| {
        let n: usize = axes.shape(&grid).iter().product();
        RateSpec::Table((0..n).map(|_| rng.gen_range(lo..hi)).collect())
    };
    sc.rates.mu = table(Axes::STATE, 0.05, 1.0);
    sc.rates.r = table(Axes::STATE, 0.05, 0.95);
    sc.rates.f = table(Axes::STATE, 0.0, 0.5);
    sc.rates.c_inflow = table(Axes::TIME_SPACE, 0.0, 0.5);
    sc.rates.p0 = table(Axes::SIZE_SPACE, 0.0, 2.0);
    let a = rng.gen_range(0.5..1.5);
    let b = rng.gen_range(-0.3..0.6);
    sc.rates.gamma = Preset::LinearS { a, b }.into();
    sc.k = rng.gen_range(0.01..0.5);
    sc.bounds = ControlBounds::constant(0.0, 2.0);
    sc
}
