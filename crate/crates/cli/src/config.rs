use std::collections::BTreeSet;

use blackbox_lds::lowerbound::BuiltinController;
use blackbox_lds::pipeline::ConstantOverrides;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Sysid,
    Recover,
    Pipeline,
    LowerboundRand,
    LowerboundDet,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sysid => "sysid",
            Self::Recover => "recover",
            Self::Pipeline => "pipeline",
            Self::LowerboundRand => "lowerbound-rand",
            Self::LowerboundDet => "lowerbound-det",
        }
    }

    fn needs_plant(self) -> bool {
        matches!(self, Self::Sysid | Self::Recover | Self::Pipeline)
    }
}

/// One experiment, fully described by a single JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must agree with the command line when present.
    #[serde(default)]
    pub subcommand: Option<Subcommand>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub plant: Option<PlantSpec>,
    /// Missing bounds are taken as the tightest ones the simulated plant satisfies.
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub overrides: ConstantOverrides,
    #[serde(default)]
    pub options: RunOptions,
    #[serde(default)]
    pub lower_bound: Option<LowerBoundSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantSpec {
    /// Row-major `A` and `B`; `x1` defaults to the origin.
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        #[serde(default)]
        x1: Option<Vec<f64>>,
    },
    /// Random strongly controllable system; the seed defaults to the run seed.
    Random {
        state_dim: usize,
        input_dim: usize,
        #[serde(default)]
        max_k: Option<usize>,
        #[serde(default = "default_kappa_cap")]
        kappa_cap: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_kappa_cap() -> f64 {
    1e6
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub k: usize,
    pub kappa: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    #[default]
    Zero,
    Gaussian { sigma: f64 },
    Sinusoidal {
        #[serde(default = "one")]
        amplitude: f64,
        period: f64,
    },
    SignAdversarial {
        #[serde(default = "one")]
        scale: f64,
    },
    Replay { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    Quadratic {
        #[serde(default = "one")]
        q: f64,
        #[serde(default = "one")]
        r: f64,
    },
    PseudoHuber { delta: f64 },
    DriftingQuadratic { lo: f64, hi: f64 },
}

impl Default for CostSpec {
    fn default() -> Self {
        Self::Quadratic { q: 1.0, r: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub sdp_tol: f64,
    pub sdp_max_iters: usize,
    pub decay_stop_early: bool,
    /// Probe magnitude for re-identification before learning; off when absent.
    pub reid_scale: Option<f64>,
    pub seed_buffer_with_state: bool,
    pub comparator_iters: usize,
    pub comparator_tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            sdp_tol: 1e-9,
            sdp_max_iters: 100_000,
            decay_stop_early: true,
            reid_scale: None,
            seed_buffer_with_state: false,
            comparator_iters: 2000,
            comparator_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundSpec {
    pub dim: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Randomized attack only; defaults to `floor(dim / 8)`.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_controller")]
    pub controller: BuiltinController,
}

fn default_gamma() -> f64 {
    40.0
}

fn default_controller() -> BuiltinController {
    BuiltinController::Zero
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: String,
    pub steps_csv: String,
    pub summary_json: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: ".".into(),
            steps_csv: "steps.csv".into(),
            summary_json: "summary.json".into(),
        }
    }
}

/// A parsed config plus the override keys that came from `--set`.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub flag_keys: BTreeSet<String>,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// Applies `key.path=value` edits; `value` is read as JSON, else as a string.
pub fn apply_sets(doc: &mut Value, sets: &[String]) -> Result<BTreeSet<String>, CliError> {
    let mut keys = BTreeSet::new();
    for raw in sets {
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| schema("--set", format!("expected key=value, got `{raw}`")))?;
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(schema("--set", format!("malformed key `{key}`")));
        }
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let mut node = &mut *doc;
        for seg in key.split('.') {
            node = match node {
                Value::Array(items) => {
                    let idx: usize = seg.parse().map_err(|_| schema(key, format!("`{seg}` is not an array index")))?;
                    let len = items.len();
                    items.get_mut(idx).ok_or_else(|| schema(key, format!("index {idx} out of range (len {len})")))?
                }
                other => {
                    if other.is_null() {
                        *other = Value::Object(Default::default());
                    }
                    let obj = other.as_object_mut().ok_or_else(|| schema(key, format!("cannot descend into `{seg}`")))?;
                    obj.entry(seg).or_insert(Value::Null)
                }
            };
        }
        *node = parsed;
        keys.insert(key.to_string());
    }
    Ok(keys)
}

/// Parses the document, reporting the offending field path on failure.
pub fn parse_config(doc: Value) -> Result<ExperimentConfig, CliError> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        schema(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
    })
}

pub fn load(text: &str, sets: &[String]) -> Result<LoadedConfig, CliError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| schema("<document>", e.to_string()))?;
    if !doc.is_object() {
        return Err(schema("<root>", "config must be a JSON object"));
    }
    let flag_keys = apply_sets(&mut doc, sets)?;
    Ok(LoadedConfig {
        config: parse_config(doc)?,
        flag_keys,
    })
}

impl ExperimentConfig {
    /// Checks the parts of the schema that depend on the subcommand.
    pub fn validate_for(&self, cmd: Subcommand) -> Result<(), CliError> {
        if let Some(declared) = self.subcommand {
            if declared != cmd {
                return Err(schema("subcommand", format!("config declares `{}` but `{}` was requested", declared.name(), cmd.name())));
            }
        }
        if cmd.needs_plant() {
            if self.plant.is_none() {
                return Err(schema("plant", "required for this subcommand"));
            }
            if self.horizon.is_none() {
                return Err(schema("horizon", "required for this subcommand"));
            }
        } else if self.lower_bound.is_none() {
            return Err(schema("lower_bound", "required for this subcommand"));
        }
        if self.uses_randomness(cmd) && self.seed.is_none() {
            return Err(schema("seed", "mandatory because this run has a randomized component"));
        }
        Ok(())
    }

    fn uses_randomness(&self, cmd: Subcommand) -> bool {
        if !cmd.needs_plant() {
            return cmd == Subcommand::LowerboundRand;
        }
        let random_plant = matches!(self.plant, Some(PlantSpec::Random { seed: None, .. }));
        let random_noise = matches!(self.disturbance, DisturbanceSpec::Gaussian { .. });
        let random_cost = matches!(self.cost, CostSpec::DriftingQuadratic { .. });
        let reid = cmd == Subcommand::Pipeline && self.options.reid_scale.is_some();
        random_plant || random_noise || random_cost || reid
    }
}
