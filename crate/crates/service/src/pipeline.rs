//! Tokenizer training and pretraining from raw scripts.

use std::io::Write;

use cmdrisk_core::bpe::{train_bpe, REQUIRED_SPECIALS};
use cmdrisk_core::Vocabulary;
use cmdrisk_model::train::{annotate_corpus, PretrainResult};
use cmdrisk_model::{init_params, pretrain, ModelConfig, ModelError};

use crate::settings::Settings;

/// Learns a vocabulary of `model.vocab_size` tokens over every command.
pub fn train_vocabulary(scripts: &[Vec<String>], model: &ModelConfig) -> Result<Vocabulary, ModelError> {
    let corpus: Vec<&[u8]> = scripts.iter().flatten().map(|c| c.as_bytes()).collect();
    Ok(train_bpe(&corpus, model.vocab_size, &REQUIRED_SPECIALS)?)
}

/// Annotates next-command pairs and pretrains from a fresh initialization.
/// The model config's vocabulary size is set to the size actually learned.
pub fn pretrain_scripts(
    scripts: &[Vec<String>],
    vocab: &Vocabulary,
    settings: &Settings,
    seed: u64,
    telemetry: Option<&mut dyn Write>,
) -> Result<PretrainResult, ModelError> {
    let examples = annotate_corpus(scripts, settings.negative_ratio, seed)?;
    let config = ModelConfig { vocab_size: vocab.len(), ..settings.model.clone() };
    let train = cmdrisk_model::TrainConfig { seed, ..settings.pretrain.clone() };
    pretrain(&examples, vocab, init_params(&config, seed), &train, telemetry)
}
