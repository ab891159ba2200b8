//! Experiment configuration: loading, overrides, validation and the
//! resolved echo.
//!
//! Config files are TOML (or JSON, including a previous run's
//! `manifest.json`, whose `resolved_config` is used). Overrides are applied
//! to the raw tree before validation so they are checked like file keys.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LqScalar,
    OneStepGaussian,
    Toy3TwoStep,
    RadnerQuadratic,
    DelayedSharingLq,
    Linear,
    DiscreteLinear,
}

impl Family {
    /// Families whose horizon is part of the configuration.
    pub fn needs_horizon(self) -> bool {
        matches!(
            self,
            Family::LqScalar | Family::DelayedSharingLq | Family::Linear
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::LqScalar => "lq-scalar",
            Family::OneStepGaussian => "one-step-gaussian",
            Family::Toy3TwoStep => "toy3-two-step",
            Family::RadnerQuadratic => "radner-quadratic",
            Family::DelayedSharingLq => "delayed-sharing-lq",
            Family::Linear => "linear",
            Family::DiscreteLinear => "discrete-linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub info: InfoConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Family parameters; validated against the family's schema in
    /// [`crate::problem`].
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoConfig {
    /// One entry per agent; empty means every agent sees only its own
    /// current observation (or the family's built-in structure).
    #[serde(default)]
    pub agents: Vec<AgentInfoConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentInfoConfig {
    #[serde(default = "yes")]
    pub own: bool,
    /// `"markov"`, `"perfect"` or `"window-W"`.
    #[serde(default = "markov")]
    pub recall: String,
    #[serde(default)]
    pub signals: Vec<SignalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Vec<usize>>,
}

fn yes() -> bool {
    true
}

fn markov() -> String {
    "markov".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub from: usize,
    pub delay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureConfig {
    Reference,
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: usize,
    pub seed: u64,
    /// Grid steps of continuous-time families.
    pub steps: usize,
    pub tol: f64,
    pub max_cycles: usize,
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub agent_order: Option<Vec<usize>>,
    pub probe_step: f64,
    /// Basis names: constant, linear, affine, quadratic, tanh, polynomial-P.
    pub bsde_basis: String,
    pub value_basis: String,
    pub policy_basis: String,
    /// `"stationary"`, `"per-step"` or `"uniform-N"`.
    pub segmentation: Option<String>,
    /// Initial parameters per agent: either the full parameter vector or
    /// one segment block repeated over all segments.
    pub init: Option<Vec<Vec<f64>>>,
    pub measure: MeasureConfig,
    /// Martingale checkpoints as times.
    pub checkpoints: Vec<f64>,
    pub quadrature_order: usize,
    pub quadrature_cap: usize,
    pub mc_paths: Option<usize>,
    /// Paths written to `paths.csv` by `simulate`.
    pub csv_paths: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: 20_000,
            seed: 0,
            steps: 50,
            tol: 1e-3,
            max_cycles: 20,
            initial_step: 1.0,
            max_backtracks: 6,
            agent_order: None,
            probe_step: 0.25,
            bsde_basis: "quadratic".into(),
            value_basis: "quadratic".into(),
            policy_basis: "affine".into(),
            segmentation: None,
            init: None,
            measure: MeasureConfig::Reference,
            checkpoints: vec![0.25, 0.5, 1.0],
            quadrature_order: 20,
            quadrature_cap: 6,
            mc_paths: None,
            csv_paths: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Reads a config file into a raw tree.
pub fn read_tree(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::invalid(path, format!("cannot read: {e}")))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let tree: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::invalid(path, e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::invalid(path, e.to_string()))?
    };
    match tree {
        Value::Object(mut m) if m.contains_key("resolved_config") => {
            Ok(m.remove("resolved_config").unwrap_or_default())
        }
        other => Ok(other),
    }
}

/// Sets `key=value` (dotted key) in the tree. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(tree: &mut Value, assignment: &str, source: &Path) -> Result<(), CliError> {
    let Some((key, raw)) = assignment.split_once('=') else {
        return Err(CliError::invalid(
            source,
            format!("override `{assignment}` is not key=value"),
        ));
    };
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    set_path(tree, key.trim(), value, source)
}

pub fn set_path(tree: &mut Value, key: &str, value: Value, source: &Path) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::invalid(
            source,
            format!("bad override key `{key}`"),
        ));
    }
    let mut node = tree;
    for part in &parts[..parts.len() - 1] {
        let Value::Object(map) = node else {
            return Err(CliError::invalid(
                source,
                format!("`{key}`: `{part}` is not a table"),
            ));
        };
        node = map.entry(part.to_string()).or_insert_with(empty_object);
    }
    let Value::Object(map) = node else {
        return Err(CliError::invalid(
            source,
            format!("`{key}`: parent is not a table"),
        ));
    };
    map.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Deserializes `value`, reporting the offending key path on failure.
pub fn from_tree<T: DeserializeOwned>(
    value: Value,
    prefix: &str,
    source: &Path,
) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let key = match (prefix.is_empty(), inner == ".") {
            (true, _) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        let key = if key == "." {
            "<root>".to_string()
        } else {
            key
        };
        CliError::invalid(source, format!("{key}: {}", e.inner()))
    })
}

impl ExperimentConfig {
    pub fn from_tree(tree: Value, source: &Path) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = from_tree(tree, "", source)?;
        cfg.check(source)?;
        Ok(cfg)
    }

    fn check(&self, source: &Path) -> Result<(), CliError> {
        let bad =
            |key: &str, reason: &str| Err(CliError::invalid(source, format!("{key}: {reason}")));
        let family = self.problem.family;
        match self.problem.horizon {
            None if family.needs_horizon() => {
                return bad(
                    "problem.horizon",
                    &format!("missing key (required by family {})", family.name()),
                )
            }
            Some(_) if !family.needs_horizon() => {
                return bad(
                    "problem.horizon",
                    &format!("not used by family {}", family.name()),
                )
            }
            Some(h) if !(h > 0.0 && h.is_finite()) => {
                return bad("problem.horizon", "must be positive and finite")
            }
            _ => {}
        }
        if !self.problem.params.is_object() {
            return bad("problem.params", "must be a table");
        }
        let r = &self.run;
        if r.paths < 2 {
            return bad("run.paths", "at least 2 paths are needed");
        }
        if r.steps == 0 {
            return bad("run.steps", "must be positive");
        }
        if !(r.tol > 0.0) {
            return bad("run.tol", "must be positive");
        }
        if !(r.initial_step > 0.0) {
            return bad("run.initial_step", "must be positive");
        }
        if !(r.probe_step > 0.0) {
            return bad("run.probe_step", "must be positive");
        }
        if r.quadrature_order == 0 {
            return bad("run.quadrature_order", "must be positive");
        }
        if r.checkpoints.iter().any(|t| !(*t >= 0.0)) {
            return bad("run.checkpoints", "times must be non-negative");
        }
        for (key, name) in [
            ("run.bsde_basis", &r.bsde_basis),
            ("run.value_basis", &r.value_basis),
            ("run.policy_basis", &r.policy_basis),
        ] {
            if let Err(reason) = crate::problem::parse_basis(name) {
                return bad(key, &reason);
            }
        }
        if let Some(s) = &r.segmentation {
            if let Err(reason) = crate::problem::parse_segmentation(s) {
                return bad("run.segmentation", &reason);
            }
        }
        for (i, a) in self.info.agents.iter().enumerate() {
            if let Err(reason) = crate::problem::parse_recall(&a.recall) {
                return bad(&format!("info.agents[{i}].recall"), &reason);
            }
        }
        if self.output.formats.is_empty() {
            return bad("output.formats", "at least one format is required");
        }
        Ok(())
    }
}
