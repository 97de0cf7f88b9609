//! Rate specifications: constants, tabulated arrays and a small catalog of
//! analytic presets.

use std::f64::consts::PI;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::field::{Axes, Field};
use crate::grid::Grid3;

/// Analytic rate presets.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Constant { value: f64 },
    /// `a + b s`
    LinearS { a: f64, b: f64 },
    /// `a + b t`
    LinearT { a: f64, b: f64 },
    /// `mean + amp cos(mode pi x / L)`
    CosineX { mean: f64, amp: f64, mode: u32 },
    /// Pointwise product of factors.
    Product(Vec<Preset>),
}

impl Preset {
    pub const NAMES: [&'static str; 5] = ["constant", "linear_s", "linear_t", "cosine_x", "product"];

    pub fn eval(&self, s: f64, t: f64, x: f64, length: f64) -> f64 {
        match self {
            Preset::Constant { value } => *value,
            Preset::LinearS { a, b } => a + b * s,
            Preset::LinearT { a, b } => a + b * t,
            Preset::CosineX { mean, amp, mode } => mean + amp * (*mode as f64 * PI * x / length).cos(),
            Preset::Product(fs) => fs.iter().map(|f| f.eval(s, t, x, length)).product(),
        }
    }

    pub fn d_ds(&self, s: f64, t: f64, x: f64, length: f64) -> f64 {
        match self {
            Preset::LinearS { b, .. } => *b,
            Preset::Product(fs) => (0..fs.len())
                .map(|m| {
                    fs.iter()
                        .enumerate()
                        .map(|(n, f)| {
                            if n == m {
                                f.d_ds(s, t, x, length)
                            } else {
                                f.eval(s, t, x, length)
                            }
                        })
                        .product::<f64>()
                })
                .sum(),
            _ => 0.0,
        }
    }

    pub fn depends_on_space(&self) -> bool {
        match self {
            Preset::CosineX { amp, mode, .. } => *amp != 0.0 && *mode != 0,
            Preset::Product(fs) => fs.iter().any(Preset::depends_on_space),
            _ => false,
        }
    }

    fn from_json(obj: &Map<String, Value>, key: &str) -> Result<Preset> {
        let name = obj
            .get("preset")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config(format!("{key}: `preset` must be a string")))?;
        let allowed: &[&str] = match name {
            "constant" => &["preset", "value"],
            "linear_s" | "linear_t" => &["preset", "a", "b"],
            "cosine_x" => &["preset", "mean", "amp", "mode"],
            "product" => &["preset", "factors"],
            other => {
                return Err(Error::Config(format!(
                    "{key}: unknown preset `{other}` (known: {})",
                    Preset::NAMES.join(", ")
                )))
            }
        };
        if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("{key}: unknown key `{extra}` for preset `{name}`")));
        }
        let num = |field: &str| -> Result<f64> {
            obj.get(field)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Config(format!("{key}: preset `{name}` needs numeric `{field}`")))
        };
        Ok(match name {
            "constant" => Preset::Constant { value: num("value")? },
            "linear_s" => Preset::LinearS {
                a: num("a")?,
                b: num("b")?,
            },
            "linear_t" => Preset::LinearT {
                a: num("a")?,
                b: num("b")?,
            },
            "cosine_x" => Preset::CosineX {
                mean: num("mean")?,
                amp: num("amp")?,
                mode: obj
                    .get("mode")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| Error::Config(format!("{key}: cosine_x needs integer `mode`")))?
                    as u32,
            },
            _ => {
                let factors = obj
                    .get("factors")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::Config(format!("{key}: product needs array `factors`")))?;
                let mut out = Vec::with_capacity(factors.len());
                for f in factors {
                    match RateSpec::from_json(f, key)? {
                        RateSpec::Constant(v) => out.push(Preset::Constant { value: v }),
                        RateSpec::Preset(p) => out.push(p),
                        RateSpec::Table(_) => {
                            return Err(Error::Config(format!("{key}: product factors must be presets")))
                        }
                    }
                }
                Preset::Product(out)
            }
        })
    }
}

/// A rate as written in a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub enum RateSpec {
    Constant(f64),
    Preset(Preset),
    /// Values on the rate's natural grid layout, row-major (size, time, space).
    Table(Vec<f64>),
}

impl From<f64> for RateSpec {
    fn from(v: f64) -> Self {
        RateSpec::Constant(v)
    }
}

impl From<Preset> for RateSpec {
    fn from(p: Preset) -> Self {
        RateSpec::Preset(p)
    }
}

impl RateSpec {
    /// Parses `number | {"preset": ...} | {"table": [...]}`.
    pub fn from_json(v: &Value, key: &str) -> Result<RateSpec> {
        match v {
            Value::Number(n) => Ok(RateSpec::Constant(n.as_f64().unwrap_or(f64::NAN))),
            Value::Array(_) => RateSpec::from_json(&serde_json::json!({ "table": v }), key),
            Value::Object(obj) if obj.contains_key("table") => {
                if obj.len() != 1 {
                    return Err(Error::Config(format!("{key}: a table spec takes only the `table` key")));
                }
                let arr = obj["table"]
                    .as_array()
                    .ok_or_else(|| Error::Config(format!("{key}: `table` must be an array")))?;
                arr.iter()
                    .map(|x| {
                        x.as_f64()
                            .ok_or_else(|| Error::Config(format!("{key}: table entries must be numbers")))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(RateSpec::Table)
            }
            Value::Object(obj) if obj.contains_key("preset") => Preset::from_json(obj, key).map(RateSpec::Preset),
            _ => Err(Error::Config(format!(
                "{key}: expected a number, a {{\"preset\": ...}} object or a {{\"table\": [...]}} object"
            ))),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            RateSpec::Constant(v) => Value::from(*v),
            RateSpec::Table(vs) => serde_json::json!({ "table": vs }),
            RateSpec::Preset(p) => preset_json(p),
        }
    }

    /// Resolves the spec on `grid`; tables must match `axes`.
    pub fn resolve(&self, grid: &Grid3, axes: Axes, key: &str) -> Result<Rate> {
        Ok(match self {
            RateSpec::Constant(v) => Rate::Constant(*v),
            RateSpec::Preset(p) => Rate::Preset {
                preset: p.clone(),
                length: grid.length,
            },
            RateSpec::Table(values) => {
                let expected: usize = axes.shape(grid).iter().product();
                if values.len() != expected {
                    return Err(Error::Shape {
                        key: key.to_string(),
                        expected,
                        got: values.len(),
                    });
                }
                let field = Field::from_values(*grid, axes, values.clone())?;
                let ds_table = axes.size.then(|| size_derivative(&field));
                Rate::Table { field, ds_table }
            }
        })
    }
}

fn preset_json(p: &Preset) -> Value {
    use serde_json::json;
    match p {
        Preset::Constant { value } => json!({"preset": "constant", "value": value}),
        Preset::LinearS { a, b } => json!({"preset": "linear_s", "a": a, "b": b}),
        Preset::LinearT { a, b } => json!({"preset": "linear_t", "a": a, "b": b}),
        Preset::CosineX { mean, amp, mode } => json!({"preset": "cosine_x", "mean": mean, "amp": amp, "mode": mode}),
        Preset::Product(fs) => json!({"preset": "product", "factors": fs.iter().map(preset_json).collect::<Vec<_>>()}),
    }
}

/// Second-order central differences in size, one-sided at the ends.
fn size_derivative(f: &Field) -> Field {
    let g = *f.grid();
    let n = g.ns;
    let h = g.ds();
    Field::from_fn(g, f.axes(), |i, j, k| {
        let v = |ii: usize| f.get(ii, j, k);
        if n == 2 {
            (v(1) - v(0)) / h
        } else if i == 0 {
            (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * h)
        } else {
            (v(i + 1) - v(i - 1)) / (2.0 * h)
        }
    })
}

/// A rate resolved against a grid, evaluable anywhere.
#[derive(Debug, Clone, PartialEq)]
pub enum Rate {
    Constant(f64),
    Preset { preset: Preset, length: f64 },
    Table { field: Field, ds_table: Option<Field> },
}

impl Rate {
    #[inline]
    pub fn eval(&self, s: f64, t: f64, x: f64) -> f64 {
        match self {
            Rate::Constant(v) => *v,
            Rate::Preset { preset, length } => preset.eval(s, t, x, *length),
            Rate::Table { field, .. } => field.sample(s, t, x),
        }
    }

    /// Partial derivative with respect to size.
    #[inline]
    pub fn d_ds(&self, s: f64, t: f64, x: f64) -> f64 {
        match self {
            Rate::Constant(_) => 0.0,
            Rate::Preset { preset, length } => preset.d_ds(s, t, x, *length),
            Rate::Table { ds_table, .. } => ds_table.as_ref().map_or(0.0, |d| d.sample(s, t, x)),
        }
    }

    pub fn depends_on_space(&self) -> bool {
        match self {
            Rate::Constant(_) => false,
            Rate::Preset { preset, .. } => preset.depends_on_space(),
            Rate::Table { field, .. } => field.axes().space && field.grid().nx > 1,
        }
    }

    /// Samples the rate at grid points on `axes`.
    pub fn on_grid(&self, grid: &Grid3, axes: Axes) -> Field {
        Field::from_fn(*grid, axes, |i, j, k| self.eval(grid.s(i), grid.t(j), grid.x(k)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn product_rule_derivative() {
        // s (1 - s)
        let p = Preset::Product(vec![Preset::LinearS { a: 0.0, b: 1.0 }, Preset::LinearS { a: 1.0, b: -1.0 }]);
        assert!((p.eval(0.3, 0.0, 0.0, 1.0) - 0.21).abs() < 1e-15);
        assert!((p.d_ds(0.3, 0.0, 0.0, 1.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn parse_specs() {
        assert_eq!(RateSpec::from_json(&json!(0.5), "mu").unwrap(), RateSpec::Constant(0.5));
        let p = RateSpec::from_json(&json!({"preset": "linear_t", "a": 1, "b": 2}), "gamma").unwrap();
        assert_eq!(p, RateSpec::Preset(Preset::LinearT { a: 1.0, b: 2.0 }));
        let err = RateSpec::from_json(&json!({"preset": "gaussian"}), "mu").unwrap_err();
        assert!(err.to_string().contains("unknown preset `gaussian`"));
        let err = RateSpec::from_json(&json!({"preset": "constant", "value": 1, "v": 2}), "mu").unwrap_err();
        assert!(err.to_string().contains("unknown key `v`"));
        let round = RateSpec::from_json(&p.to_json(), "gamma").unwrap();
        assert_eq!(round, p);
    }

    #[test]
    fn table_shape_is_checked() {
        let g = Grid3::unit(3, 2, 2);
        let err = RateSpec::Table(vec![0.0; 5]).resolve(&g, Axes::STATE, "mu").unwrap_err();
        assert!(matches!(err, Error::Shape { ref key, expected: 18, got: 5 } if key == "mu"));
    }

    #[test]
    fn tabulated_derivative_exact_for_quadratics() {
        let g = Grid3::unit(6, 2, 1);
        let vals: Vec<f64> = (0..6).flat_map(|i| { let s = g.s(i); [s * s; 3] }).collect();
        let r = RateSpec::Table(vals).resolve(&g, Axes::SIZE_TIME, "gamma").unwrap();
        for i in 0..6 {
            assert!((r.d_ds(g.s(i), 0.0, 0.0) - 2.0 * g.s(i)).abs() < 1e-12, "i={i}");
        }
    }
}
