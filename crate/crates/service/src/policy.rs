use std::fmt;

use cmdrisk_core::RiskClass;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Privilege {
    Standard,
    Elevated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Allow,
    Block,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Allow => "ALLOW",
            Decision::Block => "BLOCK",
        })
    }
}

/// SAFE is always allowed, RISKY only with elevated privilege, BLOCKED never.
pub fn decide(risk: RiskClass, privilege: Privilege) -> Decision {
    match (risk, privilege) {
        (RiskClass::Safe, _) => Decision::Allow,
        (RiskClass::Risky, Privilege::Elevated) => Decision::Allow,
        (RiskClass::Risky, Privilege::Standard) => Decision::Block,
        (RiskClass::Blocked, _) => Decision::Block,
    }
}
