//! Core building blocks for command risk classification: the byte-level BPE
//! tokenizer, the first-match rule engine, dataset ingestion and synthesis,
//! and evaluation metrics.

pub mod bpe;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod input;
pub mod risk;
pub mod rules;
pub mod synth;

pub use bpe::{train_bpe, BpeError, TokenId, Vocabulary};
pub use input::ModelInput;
pub use risk::RiskClass;
pub use rules::{load_rules, RuleSet, RuleVerdict};

/// Anything that assigns a risk class and class probabilities to a command.
pub trait RiskModel: Send + Sync {
    fn predict(&self, command: &str) -> Prediction;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub risk: RiskClass,
    pub probs: [f64; 3],
}

impl Prediction {
    pub fn from_probs(probs: [f64; 3]) -> Prediction {
        Prediction { risk: RiskClass::argmax(&probs), probs }
    }
}
