use serde::{Deserialize, Serialize};

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// `max(1, floor(sqrt(d)))`.
    Sqrt,
    All,
}

impl MaxFeatures {
    pub fn count(self, d: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((d as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { trees: 100, max_depth: None, min_samples_split: 2, max_features: MaxFeatures::Sqrt, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word2VecConfig {
    pub dim: usize,
    pub alpha_start: f64,
    pub alpha_min: f64,
    pub epochs: usize,
    pub window: usize,
    pub negatives: usize,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Word2VecConfig { dim: 50, alpha_start: 0.05, alpha_min: 0.0007, epochs: 100, window: 5, negatives: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    /// Inverse regularization strength: the penalty is `‖W‖² / (2c)`.
    pub c: f64,
    pub max_iters: u64,
    /// Stop once the gradient norm drops below this.
    pub tolerance: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig { c: 100.0, max_iters: 2000, tolerance: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub logreg: LogRegConfig,
    pub ngram: usize,
    /// Keep at most this many features, most frequent first.
    pub feature_cap: Option<usize>,
    pub word2vec: Word2VecConfig,
    pub forest: ForestConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            logreg: LogRegConfig::default(),
            ngram: 3,
            feature_cap: Some(50_000),
            word2vec: Word2VecConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}
