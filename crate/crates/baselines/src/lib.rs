//! Baseline command classifiers: character n-gram and bag-of-words
//! logistic regression, and averaged Word2Vec embeddings with a random
//! forest.

pub mod config;
pub mod features;
pub mod forest;
pub mod logreg;
pub mod word2vec;

use cmdrisk_core::dataset::LabeledCommand;
use cmdrisk_core::{Prediction, RiskClass, RiskModel};
use serde::{Deserialize, Serialize};

pub use config::{BaselineConfig, ForestConfig, LogRegConfig, MaxFeatures, Word2VecConfig};
pub use features::{featurize_bow, featurize_char_ngrams, FeatureVocab, Featurizer, SparseVec};
pub use forest::{train_random_forest, Forest};
pub use logreg::{train_logreg, LogReg};
pub use word2vec::{embed_command, train_word2vec, EmbeddingTable};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("training data has {0} class(es); at least 2 are required")]
    TooFewClasses(usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("optimizer failed: {0}")]
    Optimizer(String),
    #[error("{0}")]
    Shape(String),
    #[error("unsupported model file: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Logistic regression over sparse text features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextModel {
    pub featurizer: Featurizer,
    pub vocab: FeatureVocab,
    pub logreg: LogReg,
}

impl TextModel {
    pub fn train(featurizer: Featurizer, data: &[LabeledCommand], config: &BaselineConfig) -> Result<TextModel, BaselineError> {
        let vocab = featurizer.build_vocab(data.iter().map(|e| e.command.as_str()), config.feature_cap);
        let x: Vec<SparseVec> = data.iter().map(|e| featurizer.featurize(&e.command, &vocab)).collect();
        let y: Vec<RiskClass> = data.iter().map(|e| e.label).collect();
        let logreg = train_logreg(&x, &y, vocab.len(), &config.logreg)?;
        Ok(TextModel { featurizer, vocab, logreg })
    }
}

impl RiskModel for TextModel {
    fn predict(&self, command: &str) -> Prediction {
        Prediction::from_probs(self.logreg.predict_proba(&self.featurizer.featurize(command, &self.vocab)))
    }
}

/// Mean Word2Vec embedding per command, classified by a random forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingForest {
    pub table: EmbeddingTable,
    pub forest: Forest,
}

impl EmbeddingForest {
    /// Embeddings are trained on `corpus` (which may include unlabeled
    /// commands), the forest on `data`.
    pub fn train<S: AsRef<str>>(
        corpus: &[S],
        data: &[LabeledCommand],
        config: &BaselineConfig,
        seed: u64,
    ) -> Result<EmbeddingForest, BaselineError> {
        let table = train_word2vec(corpus, &config.word2vec, seed)?;
        let x: Vec<Vec<f32>> = data.iter().map(|e| embed_command(&table, &e.command)).collect();
        let y: Vec<RiskClass> = data.iter().map(|e| e.label).collect();
        let forest = train_random_forest(&x, &y, &config.forest, seed ^ 0x5eed)?;
        Ok(EmbeddingForest { table, forest })
    }
}

impl RiskModel for EmbeddingForest {
    fn predict(&self, command: &str) -> Prediction {
        let v = embed_command(&self.table, command);
        let probs = self.forest.predict_proba(&v);
        Prediction { risk: self.forest.predict(&v), probs }
    }
}

pub const MODEL_FORMAT: &str = "cmdrisk-baseline";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineModel {
    Ngram { config: BaselineConfig, model: TextModel },
    Bow { config: BaselineConfig, model: TextModel },
    W2vForest { config: BaselineConfig, model: EmbeddingForest },
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: BaselineModel,
}

impl BaselineModel {
    pub fn kind(&self) -> &'static str {
        match self {
            BaselineModel::Ngram { .. } => "ngram",
            BaselineModel::Bow { .. } => "bow",
            BaselineModel::W2vForest { .. } => "w2v-forest",
        }
    }

    pub fn as_risk_model(&self) -> &dyn RiskModel {
        match self {
            BaselineModel::Ngram { model, .. } | BaselineModel::Bow { model, .. } => model,
            BaselineModel::W2vForest { model, .. } => model,
        }
    }

    pub fn to_json(&self) -> Result<String, BaselineError> {
        Ok(serde_json::to_string(&Envelope { format: MODEL_FORMAT.into(), version: MODEL_VERSION, model: self.clone() })?)
    }

    pub fn from_json(text: &str) -> Result<BaselineModel, BaselineError> {
        let env: Envelope = serde_json::from_str(text)?;
        if env.format != MODEL_FORMAT || env.version != MODEL_VERSION {
            return Err(BaselineError::Format(format!("{} v{}", env.format, env.version)));
        }
        let mut m = env.model;
        match &mut m {
            BaselineModel::Ngram { model, .. } | BaselineModel::Bow { model, .. } => model.vocab.reindex(),
            BaselineModel::W2vForest { model, .. } => model.table.reindex(),
        }
        Ok(m)
    }
}

impl RiskModel for BaselineModel {
    fn predict(&self, command: &str) -> Prediction {
        self.as_risk_model().predict(command)
    }
}
