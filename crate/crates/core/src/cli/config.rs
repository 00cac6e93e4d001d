//! Run configuration: one JSON object of flat dotted keys such as
//! `"train.alpha": 0.5`, layered over defaults and then overridden by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CliError;
use crate::corpus::SyntheticConfig;
use crate::evaluation::InferenceMode;
use crate::model::GateMode;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_experts: usize,
    pub gate_mode: GateMode,
    pub max_len: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            hidden_dim: 100,
            n_experts: 4,
            gate_mode: GateMode::PerLabel,
            max_len: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
    pub mode: InferenceMode,
    /// Report the disparity on `synthetic.confounded_label` for
    /// `synthetic.confound_attribute`.
    pub audit: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            ks: vec![5],
            mode: InferenceMode::Deci,
            audit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Epoch log; defaults to `<checkpoint>.epochs.jsonl`.
    pub epoch_log: Option<PathBuf>,
    /// Report destination; stdout when unset.
    pub report: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            checkpoint: PathBuf::from("model.deci"),
            epoch_log: None,
            report: None,
        }
    }
}

impl Paths {
    pub fn epoch_log(&self) -> PathBuf {
        self.epoch_log
            .clone()
            .unwrap_or_else(|| suffixed(&self.checkpoint, ".epochs.jsonl"))
    }

    pub fn manifest(&self) -> PathBuf {
        suffixed(&self.checkpoint, ".manifest.json")
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synthetic: SyntheticConfig,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub paths: Paths,
}

fn insert_path(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts = key.split('.').peekable();
    let mut node = root;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Config(format!("malformed key {key:?}")));
        }
        if parts.peek().is_none() {
            node.insert(part.to_owned(), value);
            return Ok(());
        }
        let child = node
            .entry(part.to_owned())
            .or_insert_with(|| Value::Object(Map::new()));
        node = child
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("key {key:?} descends into a value")))?;
    }
    Ok(())
}

fn flatten_into(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_owned(), other.clone());
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with flat `key = value` pairs.
    pub fn from_flat<I>(pairs: I) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, Value)>,
    {
        let mut cfg = RunConfig::default();
        cfg.apply(pairs)?;
        Ok(cfg)
    }

    pub fn apply<I>(&mut self, pairs: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = (String, Value)>,
    {
        let mut flat = self.to_flat();
        for (k, v) in pairs {
            if !flat.contains_key(&k) {
                return Err(CliError::Config(format!("unknown configuration key {k:?}")));
            }
            flat.insert(k, v);
        }
        let mut root = Map::new();
        for (k, v) in flat {
            insert_path(&mut root, &k, v)?;
        }
        *self = serde_json::from_value(Value::Object(root))
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Reads a JSON object of dotted keys.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let Value::Object(map) = value else {
            return Err(CliError::Config(format!(
                "{}: expected a JSON object of dotted keys",
                path.display()
            )));
        };
        let mut flat = BTreeMap::new();
        flatten_into("", &Value::Object(map), &mut flat);
        Self::from_flat(flat)
    }

    /// Every field as a dotted key. Optional fields that are unset appear
    /// as `null`.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = BTreeMap::new();
        flatten_into("", &value, &mut out);
        out
    }

    /// The flat echo without filesystem locations, so reports do not depend
    /// on where a run happened.
    pub fn echo_without_paths(&self) -> BTreeMap<String, Value> {
        let mut flat = self.to_flat();
        flat.retain(|k, _| !k.starts_with("paths."));
        flat
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.synthetic.seed = seed;
        self.train.seed = seed;
    }
}

/// Parses `KEY=VALUE`; the value is read as JSON when it parses, otherwise
/// taken as a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
    Ok((k.trim().to_owned(), value))
}
