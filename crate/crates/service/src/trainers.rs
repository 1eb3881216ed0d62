//! Adapters that let every model kind take part in the data-size experiment.

use std::error::Error;

use cmdrisk_baselines::{BaselineConfig, BaselineModel, EmbeddingForest, Featurizer, TextModel};
use cmdrisk_core::dataset::LabeledCommand;
use cmdrisk_core::experiment::Trainer;
use cmdrisk_core::{RiskModel, Vocabulary};
use cmdrisk_model::{finetune, init_params, ModelConfig, Parameters, TrainConfig};

type BoxError = Box<dyn Error + Send + Sync>;

/// Where the encoder weights come from before finetuning.
pub enum Backbone {
    Pretrained(Parameters<f32>),
    /// Fresh initialization from the given config, seeded per run.
    Random(ModelConfig),
}

pub struct TransformerTrainer {
    pub name: String,
    pub backbone: Backbone,
    pub vocab: Vocabulary,
    pub config: TrainConfig,
}

impl Trainer for TransformerTrainer {
    fn name(&self) -> &str {
        &self.name
    }

    fn train(&self, train: &[LabeledCommand], dev: &[LabeledCommand], seed: u64) -> Result<Box<dyn RiskModel>, BoxError> {
        let init = match &self.backbone {
            Backbone::Pretrained(p) => p.clone(),
            Backbone::Random(cfg) => init_params(cfg, seed),
        };
        let config = TrainConfig { seed, ..self.config.clone() };
        let result = finetune(init, &self.vocab, train, dev, &config, None)?;
        Ok(Box::new(result.classifier))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Ngram,
    Bow,
    W2vForest,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Ngram, BaselineKind::Bow, BaselineKind::W2vForest];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Ngram => "ngram",
            BaselineKind::Bow => "bow",
            BaselineKind::W2vForest => "w2v-forest",
        }
    }

    pub fn parse(s: &str) -> Option<BaselineKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Trains one baseline. Word2Vec embeddings use `corpus` plus the training
/// commands.
pub fn train_baseline(
    kind: BaselineKind,
    train: &[LabeledCommand],
    corpus: &[String],
    config: &BaselineConfig,
    seed: u64,
) -> Result<BaselineModel, cmdrisk_baselines::BaselineError> {
    Ok(match kind {
        BaselineKind::Ngram => BaselineModel::Ngram {
            config: config.clone(),
            model: TextModel::train(Featurizer::CharNgram { n: config.ngram }, train, config)?,
        },
        BaselineKind::Bow => {
            BaselineModel::Bow { config: config.clone(), model: TextModel::train(Featurizer::Bow, train, config)? }
        }
        BaselineKind::W2vForest => {
            let mut text: Vec<&str> = corpus.iter().map(String::as_str).collect();
            text.extend(train.iter().map(|e| e.command.as_str()));
            BaselineModel::W2vForest { config: config.clone(), model: EmbeddingForest::train(&text, train, config, seed)? }
        }
    })
}

pub struct BaselineTrainer {
    pub kind: BaselineKind,
    pub config: BaselineConfig,
    pub corpus: Vec<String>,
}

impl Trainer for BaselineTrainer {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn train(&self, train: &[LabeledCommand], _dev: &[LabeledCommand], seed: u64) -> Result<Box<dyn RiskModel>, BoxError> {
        Ok(Box::new(train_baseline(self.kind, train, &self.corpus, &self.config, seed)?))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{0}: {1}")]
    Io(std::path::PathBuf, #[source] std::io::Error),
    #[error(transparent)]
    Model(#[from] cmdrisk_model::ModelError),
    #[error(transparent)]
    Baseline(#[from] cmdrisk_baselines::BaselineError),
}

/// Loads a transformer checkpoint directory or a baseline model file.
pub fn load_model(path: &std::path::Path) -> Result<std::sync::Arc<dyn RiskModel>, LoadError> {
    if path.is_dir() {
        let (params, vocab, _) = cmdrisk_model::checkpoint::load_checkpoint(path)?;
        Ok(std::sync::Arc::new(cmdrisk_model::Classifier::new(params, vocab)))
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(path.to_path_buf(), e))?;
        Ok(std::sync::Arc::new(BaselineModel::from_json(&text)?))
    }
}
