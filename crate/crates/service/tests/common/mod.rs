#![allow(dead_code)]

use cmdrisk_core::{Prediction, RiskClass, RiskModel};

/// Deterministic keyword classifier.
pub struct Keyword;

impl RiskModel for Keyword {
    fn predict(&self, command: &str) -> Prediction {
        let probs = if command.contains("rm -rf /") {
            [0.05, 0.15, 0.8]
        } else if command.contains("kill") || command.contains("rm ") {
            [0.2, 0.7, 0.1]
        } else {
            [0.9, 0.08, 0.02]
        };
        Prediction::from_probs(probs)
    }
}

pub struct Panics;

impl RiskModel for Panics {
    fn predict(&self, _: &str) -> Prediction {
        panic!("injected classifier fault")
    }
}

/// Returns a fixed, possibly invalid, prediction.
pub struct Fixed(pub RiskClass, pub [f64; 3]);

impl RiskModel for Fixed {
    fn predict(&self, _: &str) -> Prediction {
        Prediction { risk: self.0, probs: self.1 }
    }
}

pub const FIXTURE_RULES: &str = include_str!("../../../core/data/reference.rules");
pub const FIXTURE_COMMANDS: &str = include_str!("../../../core/data/reference_commands.tsv");

pub fn fixture_commands() -> Vec<(String, RiskClass)> {
    FIXTURE_COMMANDS
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (cmd, label) = l.rsplit_once('\t').expect("tab separated");
            (cmd.to_string(), label.parse().expect("risk class"))
        })
        .collect()
}
