//! `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Unknown keys and duplicate keys
//! are errors. Missing keys keep their defaults.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use cmdrisk_baselines::BaselineConfig;
use cmdrisk_model::{ModelConfig, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum SettingsError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value {value:?} for {key}")]
    Value { line: usize, key: String, value: String },
}

/// Everything a run needs besides data paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Fraction of next-command pairs replaced by a random command.
    pub negative_ratio: f64,
    pub baselines: BaselineConfig,
}

impl Default for Settings {
    fn default() -> Self {
        let train = TrainConfig::default();
        Settings {
            model: ModelConfig::default(),
            pretrain: train.clone(),
            finetune: train,
            negative_ratio: 0.5,
            baselines: BaselineConfig::default(),
        }
    }
}

fn opt_usize(v: &str) -> Option<Option<usize>> {
    if v == "none" {
        Some(None)
    } else {
        v.parse().ok().map(Some)
    }
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |n| n.to_string())
}

macro_rules! settings_keys {
    ($($key:literal => $($field:ident).+ : $kind:ident,)*) => {
        const KEYS: &[&str] = &[$($key),*];

        fn assign(s: &mut Settings, key: &str, value: &str) -> Option<bool> {
            match key {
                $($key => {
                    s.$($field).+ = settings_keys!(@parse $kind value)?;
                    Some(true)
                })*
                _ => Some(false),
            }
        }

        fn render(s: &Settings) -> String {
            let mut out = String::new();
            $(let _ = writeln!(out, "{} = {}", $key, settings_keys!(@show $kind s.$($field).+));)*
            out
        }
    };
    (@parse opt $v:ident) => { opt_usize($v) };
    (@parse val $v:ident) => { FromStr::from_str($v).ok() };
    (@show opt $e:expr) => { fmt_opt($e) };
    (@show val $e:expr) => { $e };
}

settings_keys! {
    "hidden_size" => model.hidden_size: val,
    "dropout_prob" => model.dropout_prob: val,
    "attention_heads" => model.attention_heads: val,
    "hidden_layers" => model.hidden_layers: val,
    "intermediate_size" => model.intermediate_size: val,
    "vocab_size" => model.vocab_size: val,
    "max_len" => model.max_len: val,
    "output_classes" => model.output_classes: val,
    "initializer_range" => model.initializer_range: val,
    "batch_size" => pretrain.batch_size: val,
    "epochs" => pretrain.epochs: val,
    "learning_rate" => pretrain.learning_rate: val,
    "mask_rate" => pretrain.mask_rate: val,
    "pretrain_max_steps" => pretrain.max_steps: opt,
    "negative_ratio" => negative_ratio: val,
    "finetune_batch_size" => finetune.batch_size: val,
    "finetune_epochs" => finetune.epochs: val,
    "finetune_learning_rate" => finetune.learning_rate: val,
    "finetune_max_steps" => finetune.max_steps: opt,
    "lr_c" => baselines.logreg.c: val,
    "lr_max_iters" => baselines.logreg.max_iters: val,
    "ngram" => baselines.ngram: val,
    "feature_cap" => baselines.feature_cap: opt,
    "w2v_dim" => baselines.word2vec.dim: val,
    "w2v_alpha_start" => baselines.word2vec.alpha_start: val,
    "w2v_alpha_min" => baselines.word2vec.alpha_min: val,
    "w2v_epochs" => baselines.word2vec.epochs: val,
    "w2v_window" => baselines.word2vec.window: val,
    "w2v_negatives" => baselines.word2vec.negatives: val,
    "rf_trees" => baselines.forest.trees: val,
    "rf_max_depth" => baselines.forest.max_depth: opt,
    "rf_min_samples_split" => baselines.forest.min_samples_split: val,
}

impl Settings {
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn parse(text: &str) -> Result<Settings, SettingsError> {
        let mut s = Settings::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(SettingsError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(SettingsError::Duplicate { line, key: key.into() });
            }
            match assign(&mut s, key, value) {
                Some(true) => {}
                Some(false) => return Err(SettingsError::UnknownKey { line, key: key.into() }),
                None => return Err(SettingsError::Value { line, key: key.into(), value: value.into() }),
            }
        }
        Ok(s)
    }

    /// Every key with its current value, parseable by [`Settings::parse`].
    pub fn to_file_string(&self) -> String {
        render(self)
    }

    /// Reduced model for single-CPU runs.
    pub fn desk() -> Settings {
        Settings {
            model: ModelConfig::desk(),
            pretrain: TrainConfig { max_steps: Some(2000), learning_rate: 1e-3, ..TrainConfig::default() },
            finetune: TrainConfig { batch_size: 32, epochs: 4, ..TrainConfig::default() },
            ..Settings::default()
        }
    }
}
