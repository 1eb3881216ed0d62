//! A BERT-style transformer encoder with hand-written backpropagation,
//! Adam, checkpoints, and the pretraining and finetuning loops built on it.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod params;
pub mod scalar;
pub mod train;

pub use config::ModelConfig;
pub use encoder::{backward, batch_loss, forward_encoder, BatchLoss, Gradients, Heads};
pub use params::{init_params, Parameters, Tensor};
pub use train::{finetune, pretrain, Classifier, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("loss diverged at step {step}")]
    Diverged { step: usize },
    #[error("training data has a single class ({0})")]
    SingleClass(cmdrisk_core::RiskClass),
    #[error("no script with at least two commands")]
    NoPairs,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint tensor {name}: {message}")]
    Tensor { name: String, message: String },
    #[error("vocabulary: {0}")]
    Vocab(#[from] cmdrisk_core::BpeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
