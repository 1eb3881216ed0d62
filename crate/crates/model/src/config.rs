use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub dropout_prob: f64,
    pub attention_heads: usize,
    pub hidden_layers: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub output_classes: usize,
    pub initializer_range: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_size: 256,
            dropout_prob: 0.1,
            attention_heads: 4,
            hidden_layers: 4,
            intermediate_size: 1024,
            vocab_size: 20000,
            max_len: 1024,
            output_classes: 3,
            initializer_range: 0.02,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            hidden_size: 64,
            attention_heads: 2,
            hidden_layers: 2,
            intermediate_size: 256,
            vocab_size: 1000,
            max_len: 128,
            ..Default::default()
        }
    }

    pub fn head_size(&self) -> usize {
        self.hidden_size / self.attention_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("hidden_size", self.hidden_size),
            ("attention_heads", self.attention_heads),
            ("hidden_layers", self.hidden_layers),
            ("intermediate_size", self.intermediate_size),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("output_classes", self.output_classes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_size % self.attention_heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden_size {} is not divisible by attention_heads {}",
                self.hidden_size, self.attention_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(ModelError::Config(format!("dropout_prob {} outside [0, 1)", self.dropout_prob)));
        }
        if !(self.initializer_range > 0.0 && self.initializer_range.is_finite()) {
            return Err(ModelError::Config("initializer_range must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_size(), 64);
        assert_eq!(c.output_classes, 3);
        ModelConfig::desk().validate().unwrap();
    }

    #[test]
    fn rejects_bad() {
        let c = ModelConfig { attention_heads: 3, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { dropout_prob: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { vocab_size: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
