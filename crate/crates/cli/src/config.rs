//! The run configuration: defaults, TOML file, and `--set` overrides.

use std::path::{Path, PathBuf};

use dcan::data::SynthSpec;
use dcan::model::{Activation, ModelConfig, Pooling};
use dcan::training::TrainConfig;
use dcan::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Architecture settings; vocabulary size and label count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub kernel_size: usize,
    pub num_levels: usize,
    /// One width per level, or a single width used for every level.
    pub channels: Vec<usize>,
    /// Explicit per-level dilations; empty means `2^level`.
    pub dilations: Vec<usize>,
    pub projection_dim: usize,
    pub conv_bias: bool,
    pub dropout: f64,
    pub max_len: usize,
    pub activation: Activation,
    pub pooling: Pooling,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(2, 1);
        ModelSection {
            embed_dim: m.embed_dim,
            kernel_size: m.kernel_size,
            num_levels: m.num_levels,
            channels: vec![m.channels[0]],
            dilations: Vec::new(),
            projection_dim: m.projection_dim,
            conv_bias: m.conv_bias,
            dropout: m.dropout,
            max_len: m.max_len,
            activation: m.activation,
            pooling: m.pooling,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, vocab_size: usize, num_labels: usize) -> Result<ModelConfig> {
        let channels = if self.channels.len() == 1 {
            vec![self.channels[0]; self.num_levels]
        } else {
            self.channels.clone()
        };
        let cfg = ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            num_labels,
            kernel_size: self.kernel_size,
            channels,
            num_levels: self.num_levels,
            dilations: (!self.dilations.is_empty()).then(|| self.dilations.clone()),
            projection_dim: self.projection_dim,
            conv_bias: self.conv_bias,
            dropout: self.dropout,
            max_len: self.max_len,
            activation: self.activation,
            pooling: self.pooling,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextSection {
    /// Tokens seen fewer times than this in the training split map to UNK.
    pub min_frequency: usize,
}

impl Default for TextSection {
    fn default() -> Self {
        TextSection { min_frequency: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    /// Codes listed per document.
    pub k: usize,
    /// JSONL documents to score; empty means the raw file of `paths.eval_split`.
    pub input: String,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            k: 5,
            input: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Raw `train/dev/test.jsonl` splits and the rule manifest.
    pub data_dir: PathBuf,
    /// Vocabulary, label list and encoded splits.
    pub prep_dir: PathBuf,
    /// Checkpoints and training history.
    pub run_dir: PathBuf,
    pub report_dir: PathBuf,
    pub predict_dir: PathBuf,
    /// Checkpoint for evaluate and predict; empty means `run_dir/best.ckpt`.
    pub checkpoint: String,
    /// Split scored by evaluate.
    pub eval_split: String,
    /// Continue from `run_dir/last.ckpt` instead of starting fresh.
    pub resume: bool,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data_dir: "data".into(),
            prep_dir: "prep".into(),
            run_dir: "run".into(),
            report_dir: "report".into(),
            predict_dir: "predict".into(),
            checkpoint: String::new(),
            eval_split: "test".into(),
            resume: false,
        }
    }
}

impl PathsSection {
    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.is_empty() {
            self.run_dir.join("best.ckpt")
        } else {
            PathBuf::from(&self.checkpoint)
        }
    }
}

/// Everything a command needs, in one file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub text: TextSection,
    pub predict: PredictSection,
    pub paths: PathsSection,
}

impl RunConfig {
    /// Defaults, then the optional file, then each `key=value` override in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = Table::try_from(RunConfig::default()).map_err(config_err)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let parsed: Table = text
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))?;
            merge(&mut table, parsed);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))?;
        cfg.train.validate()?;
        cfg.synth.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// Writes the effective configuration as `config.toml` inside `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), self.to_toml()?)?;
        Ok(())
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(one_line(&e.to_string()))
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `section.key=value`; the value is read as TOML and falls back to a plain string.
fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        node = match node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("`{p}` in `{key}` is not a section"))),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
