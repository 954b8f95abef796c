//! Experiment configuration.
//!
//! Files hold one `section.key = value` per line; `#` starts a comment.
//! Values are numbers, `true`/`false`, comma-separated number lists or bare
//! strings. Every key not given keeps its default, except `training.seed`,
//! which must always be set explicitly.

use std::path::{Path, PathBuf};

use bridgekit::connectors::{ConnectorConfig, ConnectorSpec, QformerSpec};
use bridgekit::datapipe::{ConcatPolicy, LongformSpec};
use bridgekit::frozen_stubs::{DecoderConfig, PretrainConfig, TaskSpec};
use bridgekit::ConnectorKind;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectorSection {
    pub kind: ConnectorKind,
    /// FC frame stacking factor `m`.
    pub stack: usize,
    /// FC hidden width; 0 means `4 * d_t`.
    pub hidden: usize,
    /// CA downsampling rate `s`.
    pub downsample: usize,
    pub heads: usize,
    pub n_queries: usize,
    /// Query width; 0 means `d_x`.
    pub d_query: usize,
    pub blocks: usize,
    pub segment_len: usize,
    pub segment_pe: bool,
}

impl Default for ConnectorSection {
    fn default() -> Self {
        Self {
            kind: ConnectorKind::Qf,
            stack: 10,
            hidden: 0,
            downsample: 10,
            heads: 4,
            n_queries: 16,
            d_query: 0,
            blocks: 2,
            segment_len: 300,
            segment_pe: true,
        }
    }
}

impl ConnectorSection {
    pub fn build(&self, d_x: usize, d_t: usize) -> ConnectorConfig {
        let qformer = QformerSpec {
            n_queries: self.n_queries,
            d_query: if self.d_query == 0 { d_x } else { self.d_query },
            n_blocks: self.blocks,
            n_heads: self.heads,
        };
        let spec = match self.kind {
            ConnectorKind::Fc => ConnectorSpec::Fc {
                stack: self.stack,
                hidden: if self.hidden == 0 { 4 * d_t } else { self.hidden },
            },
            ConnectorKind::Ca => ConnectorSpec::Ca {
                downsample: self.downsample,
                n_heads: self.heads,
            },
            ConnectorKind::Qf => ConnectorSpec::Qf(qformer),
            ConnectorKind::SegQf => ConnectorSpec::SegQf {
                qformer,
                segment_len: self.segment_len,
                segment_pe: self.segment_pe,
            },
        };
        ConnectorConfig { d_x, d_t, spec }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcatSection {
    pub enabled: bool,
    pub t_max: f64,
}

impl Default for ConcatSection {
    fn default() -> Self {
        Self {
            enabled: false,
            t_max: 30.0,
        }
    }
}

impl ConcatSection {
    pub fn policy(&self) -> ConcatPolicy {
        if self.enabled {
            ConcatPolicy::up_to(self.t_max)
        } else {
            ConcatPolicy::disabled()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::warmup_steps")]
    pub warmup_steps: usize,
    pub seed: u64,
    #[serde(default = "defaults::val_every")]
    pub val_every: usize,
    #[serde(default = "defaults::n_train")]
    pub n_train: usize,
    #[serde(default = "defaults::n_val")]
    pub n_val: usize,
}

mod defaults {
    pub fn steps() -> usize {
        3000
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn warmup_steps() -> usize {
        100
    }
    pub fn val_every() -> usize {
        100
    }
    pub fn n_train() -> usize {
        2000
    }
    pub fn n_val() -> usize {
        200
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub corpus_size: usize,
    pub pretrain: PretrainConfig,
}

impl Default for DecoderSection {
    fn default() -> Self {
        Self {
            corpus_size: 4000,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_test: usize,
    /// Long-form test limits in seconds.
    pub longform: Vec<f64>,
    /// Duration bucket edges in seconds.
    pub buckets: Vec<f64>,
    pub max_decode_len: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_test: 200,
            longform: Vec::new(),
            buckets: vec![0.0, 5.0, 10.0, 15.0, 30.0, 60.0, 90.0, 120.0],
            max_decode_len: 120,
        }
    }
}

impl EvalSection {
    pub fn longform_specs(&self) -> Vec<LongformSpec> {
        self.longform.iter().map(|&t| LongformSpec { t_test: t }).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Where checkpoints, logs and reports are written.
    pub out_dir: Option<PathBuf>,
    /// Pretrained decoders are cached here, keyed by their settings.
    pub cache_dir: Option<PathBuf>,
    /// Connector weights to start from instead of a fresh initialization.
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub connector: ConnectorSection,
    #[serde(default)]
    pub concat: ConcatSection,
    #[serde(default)]
    pub task: TaskSpec,
    pub training: TrainingSection,
    #[serde(default)]
    pub decoder: DecoderSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: PathsSection,
}

impl ExperimentConfig {
    /// Defaults everywhere, with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self::parse(&format!("training.seed = {seed}")).expect("default config is valid")
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut root = serde_json::to_value(Skeleton::default()).expect("skeleton serializes");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", lineno + 1)))?;
            set_dotted(&mut root, key.trim(), parse_value(value.trim()))
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", lineno + 1)))?;
        }
        let config: ExperimentConfig = serde_json::from_value(root).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Overrides one `section.key` with a raw value string.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        set_dotted(&mut root, key, parse_value(value)).map_err(CliError::Usage)?;
        let next: ExperimentConfig = serde_json::from_value(root).map_err(|e| CliError::Usage(format!("{key}: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig::toy(self.task.vocab().size())
    }

    pub fn connector_config(&self) -> ConnectorConfig {
        self.connector.build(self.task.d_x, self.decoder_config().d_t)
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |e: bridgekit::Error| CliError::Usage(e.to_string());
        self.task.validate().map_err(usage)?;
        self.connector_config().validate().map_err(usage)?;
        self.concat.policy().validate().map_err(usage)?;
        let t = &self.training;
        if t.batch_size == 0 || t.val_every == 0 || t.n_train < 2 || t.n_val == 0 {
            return Err(CliError::Usage(
                "training.batch_size, val_every and n_val must be >= 1 and n_train >= 2".into(),
            ));
        }
        if !(t.learning_rate >= 0.0) {
            return Err(CliError::Usage("training.learning_rate must be >= 0".into()));
        }
        if self.eval.longform.iter().any(|&x| !(x > 0.0)) {
            return Err(CliError::Usage("eval.longform limits must be positive".into()));
        }
        if let Some(p) = &self.paths.init_checkpoint {
            if !p.exists() {
                return Err(CliError::Usage(format!("paths.init_checkpoint {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The config as `key = value` lines, readable by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut lines);
        lines.join("\n") + "\n"
    }
}

/// Defaults for every section; `training.seed` is absent so a file that
/// never sets it fails to deserialize.
#[derive(Serialize, Default)]
struct Skeleton {
    connector: ConnectorSection,
    concat: ConcatSection,
    task: TaskSpec,
    training: Map<String, Value>,
    decoder: DecoderSection,
    eval: EvalSection,
    paths: PathsSection,
}

fn parse_value(raw: &str) -> Value {
    if raw == "true" || raw == "false" {
        return Value::Bool(raw == "true");
    }
    if let Ok(i) = raw.parse::<u64>() {
        return Value::from(i);
    }
    if let Ok(x) = raw.parse::<f64>() {
        return Value::from(x);
    }
    if raw.contains(',') {
        let items: Vec<Value> = raw.split(',').map(|s| parse_value(s.trim())).collect();
        if items.iter().all(Value::is_number) {
            return Value::Array(items);
        }
    }
    if raw == "[]" {
        return Value::Array(Vec::new());
    }
    Value::String(raw.to_string())
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(format!("`{key}` is not a section.key name"));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(*p))
            .ok_or_else(|| format!("unknown section `{p}` in `{key}`"))?;
    }
    let map = node.as_object_mut().ok_or_else(|| format!("`{key}` is not a section"))?;
    let leaf = parts[parts.len() - 1];
    // A single number given for a list field becomes a one-element list.
    let value = match (map.get(leaf), value) {
        (Some(Value::Array(_)), v @ Value::Number(_)) => Value::Array(vec![v]),
        (_, v) => v,
    };
    map.insert(leaf.to_string(), value);
    Ok(())
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) if items.is_empty() => out.push(format!("{prefix} = []")),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(Value::to_string).collect();
            out.push(format!("{prefix} = {}", parts.join(",")));
        }
        Value::Null => {}
        Value::String(s) => out.push(format!("{prefix} = {s}")),
        other => out.push(format!("{prefix} = {other}")),
    }
}
