//! Experiment configuration files.
//!
//! A configuration is a TOML document:
//!
//! ```toml
//! seed = 7                      # optional
//! preset = "paper-example"      # optional default plant for every loop
//!
//! [simulation]                  # optional
//! horizon = 100000
//! runs = 10
//! record_level = "costs"        # costs | moments | full_trace
//! divergence_threshold = 1e12
//!
//! [network]                     # optional
//! mode = "abstracted"           # abstracted (one loop) | full
//! q = 1.0
//!
//! [sweep]                       # optional; makes `simulate` run a grid
//! grid_p = [0.1, 0.5, 0.9]
//! grid_q = [0.5, 1.0]
//! policies = ["pst", "cett"]
//!
//! [[loop]]
//! policy = "cett"               # pst | stett | cett
//! p = 0.5
//! preset = "paper-example"      # or give A, B, C, W, V, Q, R
//! A = [[0.9]]                   # a number or an array of rows
//! p_schedule = [0.2, 0.8]       # optional periodic probabilities
//! initial_mean = [0.0]          # optional
//!
//! [priorities]                  # used by `tune`
//! method = "explicit"           # explicit (give c) | equal (give m) | blend (give alpha)
//! c = [1.0, 3.0]
//! ```
//!
//! Unknown keys are rejected all at once, with their full paths.

use std::path::Path;

use lqetc::presets::{self, PRESET_NAMES};
use lqetc::NetworkConfig;
use lqetc::sim::{
    ExperimentConfig, LoopConfig, RecordLevel, DEFAULT_DIVERGENCE_THRESHOLD, DEFAULT_HORIZON,
    DEFAULT_RUNS,
};
use lqetc::{PlantParams, Policy};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

pub const SEED_ENV: &str = "LQETC_SEED";

const TOP_KEYS: &[&str] = &["seed", "preset", "simulation", "network", "sweep", "loop", "priorities"];
const SIMULATION_KEYS: &[&str] = &["horizon", "runs", "record_level", "divergence_threshold"];
const NETWORK_KEYS: &[&str] = &["mode", "q"];
const SWEEP_KEYS: &[&str] = &["grid_p", "grid_q", "policies"];
const LOOP_KEYS: &[&str] = &[
    "policy", "p", "preset", "p_schedule", "initial_mean", "A", "B", "C", "W", "V", "Q", "R",
];
const MATRIX_KEYS: &[&str] = &["A", "B", "C", "W", "V", "Q", "R"];
const PRIORITY_KEYS: &[&str] = &["method", "c", "alpha", "m"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub policy: String,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_schedule: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_mean: Option<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub grid_p: Vec<f64>,
    pub grid_q: Vec<f64>,
    pub policies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritySpec {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

/// Fully resolved configuration. This is what the manifest digest covers
/// and what a manifest stores, so a run can be repeated from it alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub horizon: usize,
    pub runs: usize,
    pub record_level: String,
    pub divergence_threshold: f64,
    pub network: NetworkSpec,
    pub loops: Vec<LoopSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priorities: Option<PrioritySpec>,
}

/// Values given on the command line. Each one replaces the configured value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub horizon: Option<usize>,
    pub grid_p: Option<Vec<f64>>,
    pub grid_q: Option<Vec<f64>>,
    pub policy: Option<Policy>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("matrix {name} must have equal-length, non-empty rows")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl LoopSpec {
    pub fn from_params(params: &PlantParams, policy: Policy, p: f64) -> Self {
        Self {
            policy: policy.name().into(),
            p,
            p_schedule: None,
            initial_mean: None,
            a: matrix_rows(&params.a),
            b: matrix_rows(&params.b),
            c: matrix_rows(&params.c),
            w: matrix_rows(&params.w),
            v: matrix_rows(&params.v),
            q: matrix_rows(&params.q),
            r: matrix_rows(&params.r),
        }
    }

    pub fn params(&self) -> Result<PlantParams, CliError> {
        Ok(PlantParams::new(
            rows_to_matrix("A", &self.a)?,
            rows_to_matrix("B", &self.b)?,
            rows_to_matrix("C", &self.c)?,
            rows_to_matrix("W", &self.w)?,
            rows_to_matrix("V", &self.v)?,
            rows_to_matrix("Q", &self.q)?,
            rows_to_matrix("R", &self.r)?,
        )?)
    }

    pub fn policy(&self) -> Result<Policy, CliError> {
        Ok(self.policy.parse::<Policy>()?)
    }
}

impl ResolvedConfig {
    /// Resolved form of a named preset.
    pub fn from_preset(name: &str, seed: u64) -> Option<Self> {
        let cfg = presets::preset(name, seed)?;
        Some(Self::from_experiment(&cfg))
    }

    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        let network = match cfg.network {
            NetworkConfig::Full => NetworkSpec {
                mode: "full".into(),
                q: None,
            },
            NetworkConfig::Abstracted { q } => NetworkSpec {
                mode: "abstracted".into(),
                q: Some(q),
            },
        };
        Self {
            seed: cfg.master_seed,
            horizon: cfg.horizon,
            runs: cfg.runs,
            record_level: record_level_name(cfg.record_level).into(),
            divergence_threshold: cfg.divergence_threshold,
            network,
            loops: cfg
                .loops
                .iter()
                .map(|l| {
                    let mut spec = LoopSpec::from_params(&l.params, l.policy, l.p);
                    spec.p_schedule = l.p_schedule.clone();
                    spec.initial_mean = l.initial_mean.as_ref().map(|m| m.iter().copied().collect());
                    spec
                })
                .collect(),
            sweep: None,
            priorities: None,
        }
    }

    pub fn network(&self) -> Result<NetworkConfig, CliError> {
        match self.network.mode.as_str() {
            "full" => {
                if self.network.q.is_some() {
                    return Err(CliError::Config("network.q applies to the abstracted mode only".into()));
                }
                Ok(NetworkConfig::Full)
            }
            "abstracted" => Ok(NetworkConfig::Abstracted {
                q: self.network.q.unwrap_or(1.0),
            }),
            other => Err(CliError::Config(format!(
                "unknown network mode `{other}` (expected abstracted or full)"
            ))),
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        if self.loops.is_empty() {
            return Err(CliError::Config("missing required keys: loop".into()));
        }
        let loops = self
            .loops
            .iter()
            .map(|l| {
                Ok(LoopConfig {
                    params: l.params()?,
                    policy: l.policy()?,
                    p: l.p,
                    p_schedule: l.p_schedule.clone(),
                    initial_mean: l.initial_mean.as_ref().map(|m| DVector::from_column_slice(m)),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let cfg = ExperimentConfig {
            loops,
            network: self.network()?,
            horizon: self.horizon,
            runs: self.runs,
            master_seed: self.seed,
            record_level: self.record_level.parse::<RecordLevel>()?,
            divergence_threshold: self.divergence_threshold,
            parallel: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep_policies(&self) -> Result<Vec<Policy>, CliError> {
        match &self.sweep {
            Some(s) => s.policies.iter().map(|p| Ok(p.parse::<Policy>()?)).collect(),
            None => Ok(Vec::new()),
        }
    }

    /// Applies command-line values, returning one warning per value that
    /// replaced a different configured one.
    pub fn apply(&mut self, o: &Overrides, seed_from_file: bool) -> Vec<String> {
        let mut warnings = Vec::new();
        let mut note = |what: &str, config: String, flag: String| {
            if config != flag {
                warnings.push(format!("--{what} {flag} overrides the configured value {config}"));
            }
        };
        if let Some(seed) = o.seed {
            if seed_from_file {
                note("seed", self.seed.to_string(), seed.to_string());
            }
            self.seed = seed;
        }
        if let Some(runs) = o.runs {
            note("runs", self.runs.to_string(), runs.to_string());
            self.runs = runs;
        }
        if let Some(horizon) = o.horizon {
            note("horizon", self.horizon.to_string(), horizon.to_string());
            self.horizon = horizon;
        }
        if let Some(policy) = o.policy {
            for l in &mut self.loops {
                note("policy", l.policy.clone(), policy.name().into());
                l.policy = policy.name().into();
            }
            if let Some(s) = &mut self.sweep {
                note("policy", s.policies.join(","), policy.name().into());
                s.policies = vec![policy.name().into()];
            }
        }
        if o.grid_p.is_some() || o.grid_q.is_some() {
            let base_p = self.loops.first().map_or(0.5, |l| l.p);
            let base_q = self.network.q.unwrap_or(1.0);
            let mut policies = vec!["pst".to_string()];
            if let Some(l) = self.loops.first() {
                if l.policy != "pst" {
                    policies.push(l.policy.clone());
                }
            }
            let sweep = self.sweep.get_or_insert_with(|| SweepSpec {
                grid_p: vec![base_p],
                grid_q: vec![base_q],
                policies,
            });
            let fmt = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
            if let Some(g) = &o.grid_p {
                note("grid-p", fmt(&sweep.grid_p), fmt(g));
                sweep.grid_p = g.clone();
            }
            if let Some(g) = &o.grid_q {
                note("grid-q", fmt(&sweep.grid_q), fmt(g));
                sweep.grid_q = g.clone();
            }
        }
        // Only the first override of each loop-level value is worth a line.
        warnings.dedup();
        warnings
    }

    pub fn validate_sweep(&self) -> Result<(), CliError> {
        if let Some(s) = &self.sweep {
            for &v in s.grid_p.iter().chain(&s.grid_q) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CliError::Config(format!("grid value {v} is outside [0, 1]")));
                }
            }
            if self.loops.len() != 1 {
                return Err(CliError::Config("a sweep needs exactly one loop".into()));
            }
            self.sweep_policies()?;
        }
        Ok(())
    }
}

pub fn record_level_name(level: RecordLevel) -> &'static str {
    match level {
        RecordLevel::Costs => "costs",
        RecordLevel::Moments => "moments",
        RecordLevel::FullTrace => "full_trace",
    }
}

/// Seed used when neither the command line nor the file gives one.
pub fn default_seed() -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={s} is not an unsigned integer"))),
        Err(_) => Ok(presets::DEFAULT_SEED),
    }
}

/// Where a configuration came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ResolvedConfig,
    pub seed_from_file: bool,
}

/// Loads `source` as a preset name, a manifest (`.json`) or a TOML file.
pub fn load(source: &str) -> Result<Loaded, CliError> {
    let path = Path::new(source);
    if !path.exists() {
        if PRESET_NAMES.contains(&source) {
            let config = ResolvedConfig::from_preset(source, default_seed()?).expect("listed preset exists");
            return Ok(Loaded {
                config,
                seed_from_file: false,
            });
        }
        return Err(CliError::Config(format!(
            "`{source}` is neither a file nor a preset (presets: {})",
            PRESET_NAMES.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{source}: {e}")))?;
        let resolved = manifest
            .get("resolved_config")
            .cloned()
            .ok_or_else(|| CliError::Config(format!("{source}: no resolved_config in manifest")))?;
        let config: ResolvedConfig = serde_json::from_value(resolved)
            .map_err(|e| CliError::Config(format!("{source}: {e}")))?;
        return Ok(Loaded {
            config,
            seed_from_file: true,
        });
    }
    parse_toml(&text)
}

struct Reader {
    unknown: Vec<String>,
    missing: Vec<String>,
}

impl Reader {
    fn check_keys(&mut self, table: &Table, allowed: &[&str], prefix: &str) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.unknown.push(format!("{prefix}{key}"));
            }
        }
    }
}

fn type_error(path: &str, expected: &str) -> CliError {
    CliError::Config(format!("{path} must be {expected}"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64, CliError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_error(path, "a number")),
    }
}

fn as_usize(v: &Value, path: &str) -> Result<usize, CliError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(type_error(path, "a nonnegative integer")),
    }
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, CliError> {
    v.as_str().ok_or_else(|| type_error(path, "a string"))
}

fn as_vec(v: &Value, path: &str) -> Result<Vec<f64>, CliError> {
    match v {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, x)| as_f64(x, &format!("{path}[{i}]")))
            .collect(),
        _ => Err(type_error(path, "an array of numbers")),
    }
}

fn as_matrix(v: &Value, path: &str) -> Result<Vec<Vec<f64>>, CliError> {
    match v {
        Value::Array(rows) if rows.iter().all(|r| r.is_array()) => rows
            .iter()
            .enumerate()
            .map(|(i, r)| as_vec(r, &format!("{path}[{i}]")))
            .collect(),
        Value::Float(_) | Value::Integer(_) => Ok(vec![vec![as_f64(v, path)?]]),
        _ => Err(type_error(path, "a number or an array of rows")),
    }
}

fn as_table<'a>(v: &'a Value, path: &str) -> Result<&'a Table, CliError> {
    v.as_table().ok_or_else(|| type_error(path, "a table"))
}

fn preset_loop(name: &str, path: &str) -> Result<LoopSpec, CliError> {
    let cfg = presets::preset(name, 0)
        .ok_or_else(|| CliError::Config(format!("{path}: unknown preset `{name}`")))?;
    let l = &cfg.loops[0];
    Ok(LoopSpec::from_params(&l.params, l.policy, l.p))
}

pub fn parse_toml(text: &str) -> Result<Loaded, CliError> {
    let root: Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rd = Reader {
        unknown: Vec::new(),
        missing: Vec::new(),
    };
    rd.check_keys(&root, TOP_KEYS, "");

    let seed_from_file = root.contains_key("seed");
    let seed = match root.get("seed") {
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(_) => return Err(type_error("seed", "a nonnegative integer")),
        None => default_seed()?,
    };
    let top_preset = root.get("preset").map(|v| as_str(v, "preset")).transpose()?;
    if let Some(name) = top_preset {
        preset_loop(name, "preset")?;
    }

    let mut horizon = DEFAULT_HORIZON;
    let mut runs = DEFAULT_RUNS;
    let mut record_level = "costs".to_string();
    let mut divergence_threshold = DEFAULT_DIVERGENCE_THRESHOLD;
    if let Some(v) = root.get("simulation") {
        let t = as_table(v, "simulation")?;
        rd.check_keys(t, SIMULATION_KEYS, "simulation.");
        if let Some(v) = t.get("horizon") {
            horizon = as_usize(v, "simulation.horizon")?;
        }
        if let Some(v) = t.get("runs") {
            runs = as_usize(v, "simulation.runs")?;
        }
        if let Some(v) = t.get("record_level") {
            record_level = as_str(v, "simulation.record_level")?.to_string();
            record_level.parse::<RecordLevel>()?;
        }
        if let Some(v) = t.get("divergence_threshold") {
            divergence_threshold = as_f64(v, "simulation.divergence_threshold")?;
        }
    }

    let mut loops = Vec::new();
    match root.get("loop") {
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let path = format!("loop[{i}]");
                let t = as_table(item, &path)?;
                rd.check_keys(t, LOOP_KEYS, &format!("{path}."));
                let preset = match t.get("preset") {
                    Some(v) => Some(as_str(v, &format!("{path}.preset"))?),
                    None => top_preset,
                };
                let mut spec = match preset {
                    Some(name) => preset_loop(name, &path)?,
                    None => {
                        for key in MATRIX_KEYS {
                            if !t.contains_key(*key) {
                                rd.missing.push(format!("{path}.{key}"));
                            }
                        }
                        LoopSpec::from_params(&PlantParams::scalar(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0), Policy::Pst, 0.0)
                    }
                };
                for key in MATRIX_KEYS {
                    if let Some(v) = t.get(*key) {
                        let m = as_matrix(v, &format!("{path}.{key}"))?;
                        match *key {
                            "A" => spec.a = m,
                            "B" => spec.b = m,
                            "C" => spec.c = m,
                            "W" => spec.w = m,
                            "V" => spec.v = m,
                            "Q" => spec.q = m,
                            _ => spec.r = m,
                        }
                    }
                }
                match t.get("policy") {
                    Some(v) => {
                        let name = as_str(v, &format!("{path}.policy"))?;
                        spec.policy = name.parse::<Policy>()?.name().into();
                    }
                    None => rd.missing.push(format!("{path}.policy")),
                }
                match t.get("p") {
                    Some(v) => spec.p = as_f64(v, &format!("{path}.p"))?,
                    None => rd.missing.push(format!("{path}.p")),
                }
                if let Some(v) = t.get("p_schedule") {
                    spec.p_schedule = Some(as_vec(v, &format!("{path}.p_schedule"))?);
                }
                if let Some(v) = t.get("initial_mean") {
                    spec.initial_mean = Some(as_vec(v, &format!("{path}.initial_mean"))?);
                }
                loops.push(spec);
            }
        }
        Some(_) => return Err(type_error("loop", "an array of tables ([[loop]])")),
        None => match top_preset {
            Some(name) => {
                loops = ResolvedConfig::from_preset(name, seed).expect("preset checked above").loops;
            }
            None => {}
        },
    }

    let mut network = NetworkSpec {
        mode: if loops.len() > 1 { "full".into() } else { "abstracted".into() },
        q: None,
    };
    if let Some(v) = root.get("network") {
        let t = as_table(v, "network")?;
        rd.check_keys(t, NETWORK_KEYS, "network.");
        if let Some(v) = t.get("mode") {
            network.mode = as_str(v, "network.mode")?.to_string();
        }
        if let Some(v) = t.get("q") {
            network.q = Some(as_f64(v, "network.q")?);
        }
    }
    if network.mode == "abstracted" && network.q.is_none() {
        network.q = Some(1.0);
    }

    let mut sweep = None;
    if let Some(v) = root.get("sweep") {
        let t = as_table(v, "sweep")?;
        rd.check_keys(t, SWEEP_KEYS, "sweep.");
        let grid = |key: &str, fallback: f64| -> Result<Vec<f64>, CliError> {
            match t.get(key) {
                Some(v) => as_vec(v, &format!("sweep.{key}")),
                None => Ok(vec![fallback]),
            }
        };
        let policies = match t.get("policies") {
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let name = as_str(x, &format!("sweep.policies[{i}]"))?;
                    Ok(name.parse::<Policy>()?.name().to_string())
                })
                .collect::<Result<Vec<_>, CliError>>()?,
            Some(_) => return Err(type_error("sweep.policies", "an array of policy names")),
            None => vec!["pst".into(), "cett".into()],
        };
        sweep = Some(SweepSpec {
            grid_p: grid("grid_p", loops.first().map_or(0.5, |l| l.p))?,
            grid_q: grid("grid_q", network.q.unwrap_or(1.0))?,
            policies,
        });
    }

    let mut priorities = None;
    if let Some(v) = root.get("priorities") {
        let t = as_table(v, "priorities")?;
        rd.check_keys(t, PRIORITY_KEYS, "priorities.");
        let c = t.get("c").map(|v| as_vec(v, "priorities.c")).transpose()?;
        let alpha = t.get("alpha").map(|v| as_vec(v, "priorities.alpha")).transpose()?;
        let m = t.get("m").map(|v| as_usize(v, "priorities.m")).transpose()?;
        let method = match t.get("method") {
            Some(v) => as_str(v, "priorities.method")?.to_string(),
            None if c.is_some() => "explicit".into(),
            None if alpha.is_some() => "blend".into(),
            None => "equal".into(),
        };
        match method.as_str() {
            "explicit" if c.is_none() => rd.missing.push("priorities.c".into()),
            "blend" if alpha.is_none() => rd.missing.push("priorities.alpha".into()),
            "explicit" | "blend" | "equal" => {}
            other => {
                return Err(CliError::Config(format!(
                    "unknown priorities.method `{other}` (expected explicit, equal or blend)"
                )))
            }
        }
        priorities = Some(PrioritySpec { method, c, alpha, m });
    }

    if !rd.unknown.is_empty() {
        return Err(CliError::Config(format!("unknown keys: {}", rd.unknown.join(", "))));
    }
    if !rd.missing.is_empty() {
        return Err(CliError::Config(format!("missing required keys: {}", rd.missing.join(", "))));
    }
    Ok(Loaded {
        config: ResolvedConfig {
            seed,
            horizon,
            runs,
            record_level,
            divergence_threshold,
            network,
            loops,
            sweep,
            priorities,
        },
        seed_from_file,
    })
}
