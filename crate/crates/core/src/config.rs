//! Strict YAML run configuration with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use crate::data::{MixtureEntry, MixtureSpec};
use crate::error::{Error, Result};
use crate::eval::{AdapterConfig, EnvSpec, SuiteEntry};
use crate::policy::PolicyConfig;
use crate::rng;
use crate::trainer::TrainerConfig;

fn default_name() -> String {
    "run".into()
}

fn default_data_root() -> PathBuf {
    PathBuf::from("data")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlaData {
    /// Directory holding one store per dataset name.
    #[serde(default = "default_data_root")]
    pub data_root: PathBuf,
    #[serde(default)]
    pub data_mix: Vec<MixtureEntry>,
}

impl Default for VlaData {
    fn default() -> Self {
        VlaData {
            data_root: default_data_root(),
            data_mix: Vec::new(),
        }
    }
}

fn d_aux_examples() -> usize {
    2000
}

fn d_heldout() -> usize {
    256
}

/// Captioned scenes for the auxiliary vision-language pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxData {
    pub env: EnvSpec,
    #[serde(default = "d_aux_examples")]
    pub examples: usize,
    #[serde(default = "d_heldout")]
    pub heldout: usize,
}

/// A synthetic store written by `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateEntry {
    pub name: String,
    pub env: EnvSpec,
    pub episodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetsConfig {
    #[serde(default)]
    pub vla_data: VlaData,
    #[serde(default)]
    pub aux_data: Option<AuxData>,
    #[serde(default)]
    pub generate: Vec<GenerateEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub suite: Vec<SuiteEntry>,
    #[serde(default)]
    pub adapter: AdapterConfig,
}

fn d_host() -> String {
    "127.0.0.1".into()
}

fn d_port() -> u16 {
    8765
}

fn d_queue() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default = "d_host")]
    pub host: String,
    #[serde(default = "d_port")]
    pub port: u16,
    #[serde(default = "d_queue")]
    pub queue_depth: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: d_host(),
            port: d_port(),
            queue_depth: d_queue(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Root of every random stream; fanned out by purpose.
    #[serde(default)]
    pub seed: u64,
    pub model: PolicyConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub datasets: DatasetsConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub serve: ServeConfig,
}

impl RootConfig {
    pub fn new(model: PolicyConfig) -> Self {
        RootConfig {
            name: default_name(),
            seed: 0,
            model,
            trainer: TrainerConfig::default(),
            datasets: DatasetsConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.trainer.validate()?;
        self.eval.adapter.validate()?;
        if !self.datasets.vla_data.data_mix.is_empty() {
            self.mixture_spec().probabilities()?;
        }
        Ok(())
    }

    pub fn mixture_spec(&self) -> MixtureSpec {
        MixtureSpec {
            entries: self.datasets.vla_data.data_mix.clone(),
            seed: rng::derive(self.seed, "mixture"),
        }
    }

    pub fn seed_for(&self, purpose: &str) -> u64 {
        rng::derive(self.seed, purpose)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    /// Strict parse; unknown keys fail with their dotted path.
    pub fn from_yaml(text: &str) -> Result<Self> {
        let v: Value = serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(v)
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: RootConfig = serde_path_to_error::deserialize(v).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies `key.path=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v: Value = serde_yaml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }
}

/// Sets a dotted path inside a YAML tree; the value is parsed as YAML.
/// Numeric segments index into existing lists.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key.path=value")))?;
    let value: Value =
        serde_yaml::from_str(raw).map_err(|e| Error::Config(format!("override `{path}`: {e}")))?;
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::Config(format!("override path `{path}` has an empty segment")));
        }
        if let Value::Sequence(items) = node {
            let len = items.len();
            let slot = key
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| Error::Config(format!("override `{path}`: index `{key}` outside a list of {len}")))?;
            if i + 1 == keys.len() {
                *slot = value;
                return Ok(());
            }
            node = slot;
            continue;
        }
        if node.is_null() {
            *node = Value::Mapping(Default::default());
        }
        let map = node
            .as_mapping_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{key}` is not inside a mapping")))?;
        let k = Value::String(key.to_string());
        if i + 1 == keys.len() {
            map.insert(k, value);
            return Ok(());
        }
        node = map.entry(k).or_insert(Value::Null);
    }
    unreachable!("split yields at least one segment")
}
