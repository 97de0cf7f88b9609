//! Scenario files, control input, CSV/JSON output and run manifests.
//!
//! A scenario is a JSON object with the top-level keys `grid`, `rates`,
//! `diffusion_k`, `bounds`, `cost` and `tolerances`; only `grid` and
//! `diffusion_k` are required. Unknown keys are rejected at every level.
//!
//! ```json
//! {
//!   "grid": {"ns": 20, "nt": 20, "nx": 10, "s_f": 1.0, "T": 1.0, "L": 1.0},
//!   "rates": {"gamma": {"preset": "linear_s", "a": 1.0, "b": 0.5}, "mu": 0.2},
//!   "diffusion_k": 0.01,
//!   "bounds": {"phi_l": 0.0, "phi_m": 1.0},
//!   "cost": {"rho": 10.0, "c": 1.0, "sign_variant": "minus"}
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{Axes, Field, TimeAxis};
use crate::grid::Grid3;
use crate::presets;
use crate::rates::RateSpec;
use crate::scenario::{ControlBounds, CostParams, Scenario, Tolerances, ValidatedScenario};

/// Keys accepted under `rates`.
pub const RATE_KEYS: [&str; 6] = ["gamma", "mu", "r", "f", "C", "p0"];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    grid: Grid3,
    #[serde(default)]
    rates: Map<String, Value>,
    diffusion_k: Option<f64>,
    bounds: Option<RawBounds>,
    cost: Option<CostParams>,
    tolerances: Option<Tolerances>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    phi_l: Value,
    phi_m: Value,
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Config(format!("parse error at line {}, column {}: {e}", e.line(), e.column()))
}

/// Parses a scenario from JSON text.
pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let raw: RawScenario = serde_json::from_str(text).map_err(json_error)?;
    let k = raw
        .diffusion_k
        .ok_or_else(|| Error::Config("diffusion_k required".into()))?;
    let mut sc = Scenario::new(raw.grid);
    sc.k = k;
    for (key, v) in &raw.rates {
        let spec = RateSpec::from_json(v, key)?;
        let slot = match key.as_str() {
            "gamma" => &mut sc.rates.gamma,
            "mu" => &mut sc.rates.mu,
            "r" => &mut sc.rates.r,
            "f" => &mut sc.rates.f,
            "C" => &mut sc.rates.c_inflow,
            "p0" => &mut sc.rates.p0,
            other => {
                return Err(Error::Config(format!(
                    "rates: unknown key `{other}` (known: {})",
                    RATE_KEYS.join(", ")
                )))
            }
        };
        *slot = spec;
    }
    if let Some(b) = raw.bounds {
        sc.bounds = ControlBounds {
            phi_l: RateSpec::from_json(&b.phi_l, "phi_l")?,
            phi_m: RateSpec::from_json(&b.phi_m, "phi_m")?,
        };
    }
    if let Some(c) = raw.cost {
        sc.cost = c;
    }
    if let Some(t) = raw.tolerances {
        sc.tolerances = t;
    }
    Ok(sc)
}

/// Reads and parses a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read scenario `{}`: {e}", path.display())))?;
    parse_scenario_str(&text)
}

/// Serializes a scenario in the format read by [`parse_scenario_str`].
pub fn scenario_to_json(sc: &Scenario) -> Value {
    let rates = &sc.rates;
    serde_json::json!({
        "grid": sc.grid,
        "rates": {
            "gamma": rates.gamma.to_json(),
            "mu": rates.mu.to_json(),
            "r": rates.r.to_json(),
            "f": rates.f.to_json(),
            "C": rates.c_inflow.to_json(),
            "p0": rates.p0.to_json(),
        },
        "diffusion_k": sc.k,
        "bounds": {"phi_l": sc.bounds.phi_l.to_json(), "phi_m": sc.bounds.phi_m.to_json()},
        "cost": sc.cost,
        "tolerances": sc.tolerances,
    })
}

/// Loads `preset:<name>` or a scenario file.
pub fn load_scenario(arg: &str) -> Result<Scenario> {
    match arg.strip_prefix("preset:") {
        Some(name) => presets::by_name(name, None).ok_or_else(|| {
            Error::Config(format!("unknown preset scenario `{name}` (known: {})", presets::NAMES.join(", ")))
        }),
        None => parse_scenario(Path::new(arg)),
    }
}

/// Reads a control: a number (constant control) or a CSV field file.
pub fn read_control(arg: &str, sc: &ValidatedScenario) -> Result<Field> {
    if let Ok(v) = arg.trim().parse::<f64>() {
        return sc.check_control(&Field::constant(sc.grid, Axes::NONE, v));
    }
    let file = fs::File::open(arg).map_err(|e| Error::Config(format!("cannot read control `{arg}`: {e}")))?;
    let f = Field::read_csv(BufReader::new(file), sc.grid)?;
    sc.check_control(&f)
}

/// Time series on the time nodes as a field without size and space axes.
pub fn time_series(grid: Grid3, values: &[f64]) -> Result<Field> {
    Field::from_values(grid, Axes::new(false, Some(TimeAxis::Nodes), false), values.to_vec())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Record of one CLI invocation, written as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub scenario: String,
    pub options: BTreeMap<String, Value>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub duration_secs: f64,
    /// File name to SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

/// Output directory that checksums everything written through it.
pub struct RunOutput {
    manifest: RunManifest,
    started: Instant,
}

impl RunOutput {
    pub fn create(subcommand: &str, scenario: &str, out_dir: &Path, seed: u64) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(RunOutput {
            manifest: RunManifest {
                subcommand: subcommand.into(),
                scenario: scenario.into(),
                options: BTreeMap::new(),
                out_dir: out_dir.to_path_buf(),
                seed,
                duration_secs: 0.0,
                artifacts: BTreeMap::new(),
            },
            started: Instant::now(),
        })
    }

    pub fn option(&mut self, key: &str, value: impl Into<Value>) {
        self.manifest.options.insert(key.into(), value.into());
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.manifest.out_dir.join(name), bytes)?;
        self.manifest.artifacts.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_field(&mut self, name: &str, field: &Field) -> Result<()> {
        self.write_bytes(name, field.to_csv_string().as_bytes())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `manifest.json` and returns the manifest.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.duration_secs = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(self.manifest.out_dir.join("manifest.json"), text + "\n")?;
        Ok(self.manifest)
    }
}

/// Verifies the checksums recorded in a manifest against the files on disk.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(json_error)?;
    for (name, sum) in &m.artifacts {
        let bytes = fs::read(dir.join(name))?;
        if &sha256_hex(&bytes) != sum {
            return Err(Error::Internal(format!("checksum mismatch for {name}")));
        }
    }
    Ok(m)
}
