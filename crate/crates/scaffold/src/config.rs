//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys not given take
//! their task-dependent defaults; see [`KEYS`] for the full list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scaffold_core::coref::CorefConfig;
use scaffold_core::encoder::EncoderConfig;
use scaffold_core::model::TaskKind;
use scaffold_core::scaffold::LabelScheme;
use scaffold_core::spanrep::SpanRepConfig;
use scaffold_core::train::TrainConfig;

use crate::error::{AppError, Result};

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "task",
    "scaffold_scheme",
    "delta",
    "max_width",
    "word_dim",
    "target_dim",
    "hidden_dim",
    "layers",
    "recurrent_dropout",
    "freeze_embeddings",
    "span_ffn_dim",
    "span_ffn_depth",
    "span_dropout",
    "width_dim",
    "distance_dim",
    "position_dim",
    "softmax_margin",
    "coref_window",
    "coref_ffn_dim",
    "coref_ffn_depth",
    "coref_dropout",
    "coref_genres",
    "coref_speakers",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "batch_size",
    "clip_norm",
    "epochs",
    "early_stopping",
    "stop_metric",
    "min_epochs",
    "seed",
    "train",
    "dev",
    "treebank",
    "embeddings",
    "checkpoint",
    "log",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    /// `None` trains without the scaffold.
    pub scheme: Option<LabelScheme>,
    pub max_width: usize,
    pub encoder: EncoderConfig,
    pub span: SpanRepConfig,
    pub coref: CorefConfig,
    pub softmax_margin: bool,
    pub train: TrainConfig,
    /// Keep the checkpoint with the best dev metric rather than the last.
    pub early_stopping: bool,
    /// Stop once the dev metric reaches this value, after at least
    /// `min_epochs` epochs.
    pub stop_metric: Option<f64>,
    pub min_epochs: usize,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub treebank_path: Option<PathBuf>,
    pub embeddings_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(task: TaskKind) -> Self {
        RunConfig {
            task,
            scheme: None,
            max_width: task.default_max_width(),
            encoder: task.default_encoder(),
            span: SpanRepConfig { target_features: task.is_srl(), ..SpanRepConfig::default() },
            coref: CorefConfig::default(),
            softmax_margin: true,
            train: TrainConfig { delta: task.default_delta(), ..TrainConfig::default() },
            early_stopping: true,
            stop_metric: None,
            min_epochs: 1,
            train_path: None,
            dev_path: None,
            treebank_path: None,
            embeddings_path: None,
            checkpoint: None,
            log: None,
        }
    }

    /// Whether scaffold batches will be trained.
    pub fn scaffold_enabled(&self) -> bool {
        self.scheme.is_some() && self.train.delta > 0.0
    }

    /// Resolves a key/value map; relative paths are taken relative to `base`.
    pub fn from_map(map: &BTreeMap<String, String>, base: &Path) -> Result<Self> {
        let task = match map.get("task") {
            Some(t) => t.parse::<TaskKind>().map_err(|e| AppError::Usage(e.to_string()))?,
            None => TaskKind::FrameSrl,
        };
        let mut c = RunConfig::defaults(task);
        for (key, value) in map {
            c.set(key, value, base)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AppError::Usage(format!("config line {}: expected `key = value`", k + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(AppError::Usage(format!("config line {}: unknown key `{key}`", k + 1)));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(map)
    }

    pub fn read_map(path: &Path) -> Result<BTreeMap<String, String>> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse_text(&text)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| AppError::Usage(format!("invalid value `{v}` for `{key}`")))
        }
        let path = |v: &str| Some(base.join(v));
        match key {
            "task" => {}
            "scaffold_scheme" => {
                self.scheme = match value {
                    "none" | "" => None,
                    s => Some(LabelScheme::parse(s, &self.task.common_scheme()).map_err(|e| AppError::Usage(e.to_string()))?),
                }
            }
            "delta" => self.train.delta = num(key, value)?,
            "max_width" => self.max_width = num(key, value)?,
            "word_dim" => self.encoder.word_dim = num(key, value)?,
            "target_dim" => self.encoder.target_dim = num(key, value)?,
            "hidden_dim" => self.encoder.hidden_dim = num(key, value)?,
            "layers" => self.encoder.layers = num(key, value)?,
            "recurrent_dropout" => self.encoder.recurrent_dropout = num(key, value)?,
            "freeze_embeddings" => self.encoder.freeze_embeddings = num(key, value)?,
            "span_ffn_dim" => self.span.ffn_dim = num(key, value)?,
            "span_ffn_depth" => self.span.ffn_depth = num(key, value)?,
            "span_dropout" => self.span.dropout = num(key, value)?,
            "width_dim" => self.span.features.width_dim = num(key, value)?,
            "distance_dim" => {
                self.span.features.distance_dim = num(key, value)?;
                self.coref.distance_dim = self.span.features.distance_dim;
            }
            "position_dim" => self.span.features.position_dim = num(key, value)?,
            "softmax_margin" => self.softmax_margin = num(key, value)?,
            "coref_window" => self.coref.window = num(key, value)?,
            "coref_ffn_dim" => self.coref.ffn_dim = num(key, value)?,
            "coref_ffn_depth" => self.coref.ffn_depth = num(key, value)?,
            "coref_dropout" => self.coref.dropout = num(key, value)?,
            "coref_genres" => {
                self.coref.genres = value.split(',').map(str::trim).filter(|g| !g.is_empty()).map(String::from).collect()
            }
            "coref_speakers" => self.coref.use_speaker = num(key, value)?,
            "learning_rate" => self.train.adam.lr = num(key, value)?,
            "beta1" => self.train.adam.beta1 = num(key, value)?,
            "beta2" => self.train.adam.beta2 = num(key, value)?,
            "epsilon" => self.train.adam.eps = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "clip_norm" => self.train.clip_norm = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "early_stopping" => self.early_stopping = num(key, value)?,
            "stop_metric" => self.stop_metric = Some(num(key, value)?),
            "min_epochs" => self.min_epochs = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "train" => self.train_path = path(value),
            "dev" => self.dev_path = path(value),
            "treebank" => self.treebank_path = path(value),
            "embeddings" => self.embeddings_path = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "log" => self.log = path(value),
            _ => return Err(AppError::Usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(AppError::Usage(m));
        if !(self.train.delta >= 0.0) {
            return usage(format!("delta must be non-negative, got {}", self.train.delta));
        }
        if self.max_width == 0 {
            return usage("max_width must be at least 1".into());
        }
        if self.train.batch_size == 0 {
            return usage("batch_size must be at least 1".into());
        }
        if !(self.train.adam.lr > 0.0) {
            return usage("learning_rate must be positive".into());
        }
        if !(self.train.clip_norm > 0.0) {
            return usage("clip_norm must be positive".into());
        }
        if self.coref.window == 0 {
            return usage("coref_window must be at least 1".into());
        }
        self.encoder.validate().map_err(|e| AppError::Usage(e.to_string()))
    }
}
