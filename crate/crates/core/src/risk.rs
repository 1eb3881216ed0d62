use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Risk class assigned to a command.
///
/// The discriminant doubles as the class index used by every model head and
/// by the confusion matrix. Ordering follows danger: `Safe < Risky < Blocked`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RiskClass {
    /// Read-only or state-preserving.
    Safe = 0,
    /// May irreversibly alter the system; requires elevated privilege.
    Risky = 1,
    /// Never executable.
    Blocked = 2,
}

impl RiskClass {
    pub const ALL: [RiskClass; 3] = [RiskClass::Safe, RiskClass::Risky, RiskClass::Blocked];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<RiskClass> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskClass::Safe => "SAFE",
            RiskClass::Risky => "RISKY",
            RiskClass::Blocked => "BLOCKED",
        }
    }

    pub fn is_dangerous(self) -> bool {
        self != RiskClass::Safe
    }

    /// Index of the largest probability; ties go to the more dangerous class.
    pub fn argmax(probs: &[f64]) -> RiskClass {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate().take(Self::COUNT) {
            if p >= probs[best] {
                best = i;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown risk class `{0}` (expected SAFE, RISKY or BLOCKED)")]
pub struct ParseRiskError(pub String);

impl FromStr for RiskClass {
    type Err = ParseRiskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SAFE" => Ok(RiskClass::Safe),
            "RISKY" => Ok(RiskClass::Risky),
            "BLOCKED" => Ok(RiskClass::Blocked),
            other => Err(ParseRiskError(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_dangerous_on_ties() {
        assert_eq!(RiskClass::argmax(&[0.5, 0.5, 0.0]), RiskClass::Risky);
        assert_eq!(RiskClass::argmax(&[1.0 / 3.0; 3]), RiskClass::Blocked);
        assert_eq!(RiskClass::argmax(&[0.7, 0.2, 0.1]), RiskClass::Safe);
    }

    #[test]
    fn parse_and_display() {
        for c in RiskClass::ALL {
            assert_eq!(c.to_string().parse::<RiskClass>().unwrap(), c);
        }
        assert!("safe".parse::<RiskClass>().is_err());
    }
}
