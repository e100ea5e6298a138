//! Run configuration: one JSON file, scalar overrides from `--set`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use stopline::pde::SolverSettings;
use stopline::verify::Thresholds;
use stopline::{McSettings, ModelSpec, RuleSpec};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub horizon: f64,
    pub start: Vec<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            horizon: 1.0,
            start: vec![0.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueSection {
    pub rule: RuleSpec,
    pub start: Vec<f64>,
}

impl Default for ValueSection {
    fn default() -> Self {
        ValueSection {
            rule: RuleSpec::TrivialRoot,
            start: vec![0.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchingSection {
    pub s: f64,
    pub window: f64,
    pub start: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub points: Vec<f64>,
    pub epsilon: f64,
    /// Rules that must not beat the grid value; `None` uses the default sweep.
    pub sweep: Option<Vec<RuleSpec>>,
    pub dpp_theta: Vec<RuleSpec>,
    pub branching: Option<BranchingSection>,
    pub thresholds: Thresholds,
    /// Also write per-replication rewards.
    pub samples_csv: bool,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            points: vec![0.0],
            epsilon: 1e-4,
            sweep: None,
            dpp_theta: Vec::new(),
            branching: None,
            thresholds: Thresholds::default(),
            samples_csv: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// Inline model or a path relative to the config file.
    pub model: Value,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub value: ValueSection,
    #[serde(default)]
    pub verify: VerifySection,
    /// Relative to the config file.
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub solver: SolverSettings,
    pub mc: McSettings,
    pub simulate: SimulateSection,
    pub value: ValueSection,
    pub verify: VerifySection,
    /// Resolved output directory.
    pub output: PathBuf,
    /// Whether `mc.seed` was given explicitly.
    pub has_seed: bool,
}

/// Problems with the invocation or its files, as opposed to the model.
#[derive(Debug, thiserror::Error)]
#[error("{0:#}")]
pub struct UsageError(pub anyhow::Error);

fn usage<T>(r: anyhow::Result<T>) -> Result<T, UsageError> {
    r.map_err(UsageError)
}

/// `a.b.c=value`: the value is read as JSON when it parses, else as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            bail!("override key {key:?} has an empty component");
        }
        let map = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => bail!("override key {key:?}: {part:?} is inside a non-object"),
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one part")
}

/// Parses the config and the model. The model is not validated here so
/// that model errors keep their own exit code.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, UsageError> {
    let text = usage(fs::read_to_string(path).with_context(|| format!("reading config {}", path.display())))?;
    let mut root: Value = usage(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())))?;
    for o in overrides {
        usage(apply_override(&mut root, o))?;
    }
    let has_seed = root.pointer("/mc/seed").is_some();
    let raw: RawConfig = usage(serde_json::from_value(root).context("config schema"))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let model = match raw.model {
        Value::String(rel) => {
            let p = base.join(rel);
            let text = usage(fs::read_to_string(&p).with_context(|| format!("reading model {}", p.display())))?;
            usage(serde_json::from_str(&text).with_context(|| format!("parsing model {}", p.display())))?
        }
        inline => usage(serde_json::from_value(inline).context("model schema"))?,
    };
    Ok(RunConfig {
        model,
        solver: raw.solver,
        mc: raw.mc,
        simulate: raw.simulate,
        value: raw.value,
        verify: raw.verify,
        output: base.join(raw.output),
        has_seed,
    })
}
