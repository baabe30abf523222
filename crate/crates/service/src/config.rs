//! Configuration shared by the service and the command-line tool.
//!
//! A resolved [`Config`] is built from layers: built-in defaults, an
//! optional TOML file, environment overrides and explicit overrides (flags),
//! later layers winning. Every leaf remembers which layer set it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smoothdate_core::{
    Activation, LossConfig, Optimizer, RelevanceSpec, SyntheticSpec, TrainingConfig, Weighting,
};

use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub relevance: RelevanceSpec,
    pub retrieval: RetrievalConfig,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            server: ServerConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            training: TrainingSection::default(),
            relevance: RelevanceSpec::Thresholded { gamma: 10.0 },
            retrieval: RetrievalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Synthetic dataset parameters, in the shape of [`SyntheticSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub year_lo: i32,
    pub year_hi: i32,
    pub docs_per_year: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub mixing_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            year_lo: 1900,
            year_hi: 1999,
            docs_per_year: 20,
            feature_dim: 32,
            noise_sigma: 0.1,
            mixing_seed: 0,
        }
    }
}

impl From<&SynthConfig> for SyntheticSpec {
    fn from(c: &SynthConfig) -> Self {
        SyntheticSpec {
            year_lo: c.year_lo,
            year_hi: c.year_hi,
            docs_per_year: c.docs_per_year,
            feature_dim: c.feature_dim,
            noise_sigma: c.noise_sigma,
            mixing_seed: c.mixing_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

/// Paths are relative to `data_dir` unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub data_dir: PathBuf,
    /// Labeled dataset (CSV or JSONL by extension).
    pub dataset: Option<PathBuf>,
    /// Model checkpoint served at startup; without one the service starts
    /// with no model until the first retrain completes.
    pub checkpoint: Option<PathBuf>,
    /// Initial relevance matrix; built from `[relevance]` when absent.
    pub matrix: Option<PathBuf>,
    pub feedback: PathBuf,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            data_dir: PathBuf::from("."),
            dataset: None,
            checkpoint: None,
            matrix: None,
            feedback: PathBuf::from("feedback.jsonl"),
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_owned()
        } else {
            self.data_dir.join(path)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64],
            embedding_dim: 16,
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.embedding_dim);
        dims
    }
}

/// Training hyperparameters. `momentum = 0` selects plain SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub eta: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub momentum: f64,
    pub tau: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        let momentum = match t.optimizer {
            Optimizer::SgdMomentum { momentum } => momentum,
            Optimizer::Sgd => 0.0,
        };
        TrainingSection {
            eta: t.eta,
            batch_size: t.batch_size,
            max_iterations: t.max_iterations,
            seed: t.seed,
            momentum,
            tau: LossConfig::default().tau,
        }
    }
}

impl TrainingSection {
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            eta: self.eta,
            batch_size: self.batch_size,
            max_iterations: self.max_iterations,
            seed: self.seed,
            optimizer: if self.momentum == 0.0 {
                Optimizer::Sgd
            } else {
                Optimizer::SgdMomentum {
                    momentum: self.momentum,
                }
            },
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig::with_tau(self.tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub top_k: usize,
    pub weighting: Weighting,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: smoothdate_core::index::DEFAULT_K,
            top_k: 10,
            weighting: Weighting::default(),
        }
    }
}

/// Which layer supplied a resolved value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Default => "default",
            Origin::File => "file",
            Origin::Env => "env",
            Origin::Flag => "flag",
        })
    }
}

/// Environment variables that override configuration keys.
pub const ENV_OVERRIDES: [(&str, &str); 3] = [
    ("HOST", "server.host"),
    ("PORT", "server.port"),
    ("DATA_DIR", "data.data_dir"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: Config,
    /// Dotted key of every leaf, with the layer that set it.
    pub origins: BTreeMap<String, Origin>,
}

impl Resolved {
    /// One `key = value  (origin)` line per leaf, in key order.
    pub fn describe(&self) -> String {
        let value = toml::Value::try_from(&self.config).expect("config serializes");
        let mut leaves = BTreeMap::new();
        collect_leaves(&value, String::new(), &mut leaves);
        let mut out = String::new();
        for (key, v) in leaves {
            let origin = self.origins.get(&key).copied().unwrap_or(Origin::Default);
            out.push_str(&format!("{key} = {v}  ({origin})\n"));
        }
        out
    }
}

/// Layers configuration sources.
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    file: Option<PathBuf>,
    sections: Vec<(String, toml::Value, Origin)>,
    env: Vec<(String, String)>,
    flags: Vec<(String, toml::Value)>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: Option<&Path>) -> Self {
        self.file = path.map(Path::to_owned);
        self
    }

    /// Overlays a whole section (e.g. read from a side file) with the given
    /// origin. Applied after the config file and before the environment.
    pub fn section<T: Serialize>(
        mut self,
        key: &str,
        value: T,
        origin: Origin,
    ) -> Result<Self, ConfigError> {
        let value = toml::Value::try_from(value).map_err(|e| ConfigError::Invalid {
            key: key.to_string(),
            message: e.to_string(),
        })?;
        self.sections.push((key.to_string(), value, origin));
        Ok(self)
    }

    /// Reads the [`ENV_OVERRIDES`] variables from the process environment.
    pub fn process_env(self) -> Self {
        let vars = ENV_OVERRIDES
            .iter()
            .filter_map(|(var, _)| std::env::var(var).ok().map(|v| (var.to_string(), v)))
            .collect();
        self.env(vars)
    }

    pub fn env(mut self, vars: Vec<(String, String)>) -> Self {
        self.env = vars;
        self
    }

    /// Overrides the dotted `key` with any serializable value.
    pub fn flag<T: Serialize>(mut self, key: &str, value: T) -> Result<Self, ConfigError> {
        let value = toml::Value::try_from(value).map_err(|e| ConfigError::Invalid {
            key: key.to_string(),
            message: e.to_string(),
        })?;
        self.flags.push((key.to_string(), value));
        Ok(self)
    }

    pub fn build(self) -> Result<Resolved, ConfigError> {
        let mut origins = BTreeMap::new();
        let mut root = toml::Value::try_from(Config::default()).expect("defaults serialize");
        let mut default_leaves = BTreeMap::new();
        collect_leaves(&root, String::new(), &mut default_leaves);
        for key in default_leaves.keys() {
            origins.insert(key.clone(), Origin::Default);
        }

        if let Some(path) = &self.file {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
                path: path.clone(),
                source: e,
            })?;
            let file: toml::Value = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            overlay(&mut root, &file, String::new(), Origin::File, &mut origins);
        }
        for (key, value, origin) in &self.sections {
            let mut wrapped = toml::map::Map::new();
            wrapped.insert(key.clone(), value.clone());
            overlay(
                &mut root,
                &toml::Value::Table(wrapped),
                String::new(),
                *origin,
                &mut origins,
            );
        }
        for (var, raw) in &self.env {
            let Some((_, key)) = ENV_OVERRIDES.iter().find(|(v, _)| v == var) else {
                continue;
            };
            let value = if *key == "server.port" {
                let port: u16 = raw.parse().map_err(|_| ConfigError::Invalid {
                    key: key.to_string(),
                    message: format!("{var}={raw} is not a port number"),
                })?;
                toml::Value::Integer(port.into())
            } else {
                toml::Value::String(raw.clone())
            };
            set_dotted(&mut root, key, value, Origin::Env, &mut origins);
        }
        for (key, value) in self.flags {
            set_dotted(&mut root, &key, value, Origin::Flag, &mut origins);
        }

        let config: Config =
            root.try_into()
                .map_err(|e: toml::de::Error| ConfigError::Invalid {
                    key: String::new(),
                    message: e.message().to_string(),
                })?;
        Ok(Resolved { config, origins })
    }
}

fn collect_leaves(v: &toml::Value, prefix: String, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                collect_leaves(child, key, out);
            }
        }
        other => {
            out.insert(prefix, other.to_string());
        }
    }
}

/// Merges `top` into `base`; tables merge key-wise, everything else replaces.
fn overlay(
    base: &mut toml::Value,
    top: &toml::Value,
    prefix: String,
    origin: Origin,
    origins: &mut BTreeMap<String, Origin>,
) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) if !is_tagged(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match b.get_mut(k) {
                    Some(existing)
                        if existing.is_table() && child.is_table() && !is_tagged_value(child) =>
                    {
                        overlay(existing, child, key, origin, origins);
                    }
                    _ => {
                        b.insert(k.clone(), child.clone());
                        mark(child, key, origin, origins);
                    }
                }
            }
        }
        (b, t) => {
            *b = t.clone();
            mark(t, prefix, origin, origins);
        }
    }
}

/// Tagged tables (e.g. `relevance = { kind = ... }`) replace wholesale so a
/// variant change does not inherit stale fields.
fn is_tagged(t: &toml::map::Map<String, toml::Value>) -> bool {
    t.contains_key("kind")
}

fn is_tagged_value(v: &toml::Value) -> bool {
    v.as_table().is_some_and(is_tagged)
}

fn mark(v: &toml::Value, key: String, origin: Origin, origins: &mut BTreeMap<String, Origin>) {
    let prefix = format!("{key}.");
    origins.retain(|k, _| !k.starts_with(&prefix) && *k != key);
    let mut leaves = BTreeMap::new();
    collect_leaves(v, key, &mut leaves);
    for k in leaves.into_keys() {
        origins.insert(k, origin);
    }
}

fn set_dotted(
    root: &mut toml::Value,
    key: &str,
    value: toml::Value,
    origin: Origin,
    origins: &mut BTreeMap<String, Origin>,
) {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node.as_table_mut().expect("config nodes are tables");
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let last = parts[parts.len() - 1];
    node.as_table_mut()
        .expect("config nodes are tables")
        .insert(last.to_string(), value.clone());
    mark(&value, key.to_string(), origin, origins);
}
