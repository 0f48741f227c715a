use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hydrolim::flux_id::McParams;
use hydrolim::graphical::Observer;
use hydrolim::harness::InitialProfile;
use hydrolim::ModelSpec;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

/// Marks errors caused by the user's configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(ConfigError(msg.into()))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// Reads a config file, replacing a top-level `"model_file": "<path>"`
/// (relative to the config) with the parsed model under `"model"`.
pub fn load_value(path: &Path) -> Result<Value> {
    let mut v = read_json(path)?;
    if let Some(obj) = v.as_object_mut() {
        if let Some(file) = obj.remove("model_file") {
            let rel = file
                .as_str()
                .ok_or_else(|| config_error("`model_file` must be a string"))?;
            if obj.contains_key("model") {
                return Err(config_error("give either `model` or `model_file`, not both"));
            }
            let model = read_json(&resolve(path, rel))?;
            obj.insert("model".into(), model);
        }
    }
    Ok(v)
}

pub fn resolve(config: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let v = load_value(path)?;
    serde_json::from_value(v).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub lo: i64,
    pub len: usize,
    #[serde(default)]
    pub periodic: bool,
}

/// `simulate`: one trajectory with snapshots and current observers.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub env_seed: u64,
    pub lattice: LatticeSpec,
    pub initial: InitialProfile,
    /// Sites per macroscopic unit used to read `initial`.
    #[serde(default = "one")]
    pub scale: u64,
    /// Microscopic horizon.
    pub time: f64,
    pub snapshot_every: f64,
    #[serde(default)]
    pub observers: Vec<Observer>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> u64 {
    1
}

/// `flux`: equilibrium estimates on a density grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub env_seed: u64,
    pub grid: Vec<f64>,
    pub mc: McParams,
    /// Absolute floor of the tolerance against a closed-form flux.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Relative standard error above which a point is left out of the table.
    #[serde(default = "default_rel")]
    pub rel_threshold: f64,
}

fn default_tolerance() -> f64 {
    0.01
}

fn default_rel() -> f64 {
    0.05
}

/// `verify`: invariant suite over a model zoo.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Model files that must pass every check.
    pub models: Vec<String>,
    /// Model files whose rates must yield a monotonicity counterexample.
    #[serde(default)]
    pub counterexamples: Vec<String>,
    pub window: usize,
    pub aux_samples: usize,
    #[serde(default = "default_budget")]
    pub budget: u64,
    /// Ordered pairs per model for the coupling check.
    pub pairs: usize,
    /// Torus length of coupling and conservation runs.
    pub sites: usize,
    /// Microscopic time of coupling and conservation runs.
    pub time: f64,
    /// Random fluxes in the admissibility sweep.
    pub fluxes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_budget() -> u64 {
    u64::MAX
}

/// A model file referenced from a verify config.
pub struct ZooEntry {
    pub path: String,
    pub spec: ModelSpec,
}

pub fn load_zoo(config: &Path, files: &[String]) -> Result<Vec<ZooEntry>> {
    files
        .iter()
        .map(|f| {
            let p = resolve(config, f);
            let spec: ModelSpec = serde_json::from_value(read_json(&p)?)
                .map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            Ok(ZooEntry { path: f.clone(), spec })
        })
        .collect()
}

/// `--cell-filter`: comma-separated `N=<n>` / `seed=<s>` terms.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct CellFilter {
    pub scales: Option<Vec<u64>>,
    pub seeds: Option<Vec<u64>>,
}

impl CellFilter {
    pub fn parse(s: &str) -> Result<Self> {
        let mut f = CellFilter::default();
        for term in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = term
                .split_once('=')
                .ok_or_else(|| config_error(format!("bad cell filter term `{term}`")))?;
            let v: u64 = v
                .trim()
                .parse()
                .with_context(|| format!("bad cell filter value in `{term}`"))
                .map_err(|e| config_error(format!("{e:#}")))?;
            match k.trim() {
                "N" | "scale" => f.scales.get_or_insert_with(Vec::new).push(v),
                "seed" => f.seeds.get_or_insert_with(Vec::new).push(v),
                other => bail!(ConfigError(format!("unknown cell filter key `{other}`"))),
            }
        }
        Ok(f)
    }
}
