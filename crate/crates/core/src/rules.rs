//! First-match regular-expression rule engine.
//!
//! Rule file layout:
//!
//! ```text
//! rules v1 default=BLOCKED
//! # comment lines directly above a rule become its comment
//! 10 SAFE ls( .*)?
//! 20 BLOCKED rm -rf /bin/.*
//! ```
//!
//! Patterns must match the whole command. Rules are identified by their
//! ordinal in the file (`R1`, `R2`, ...) and evaluated by ascending priority.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::risk::RiskClass;

const HEADER: &str = "rules v1";

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("rule {rule_id}: invalid pattern: {source}")]
    Pattern {
        rule_id: String,
        #[source]
        source: Box<regex::Error>,
    },
    #[error("rules {first} and {second} share priority {priority}")]
    DuplicatePriority { priority: i64, first: String, second: String },
    #[error("default action must be SAFE or BLOCKED, got {0}")]
    BadDefault(RiskClass),
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub id: String,
    pub priority: i64,
    pub risk: RiskClass,
    pub pattern: String,
    pub comment: String,
    regex: Regex,
}

impl Rule {
    pub fn new(id: impl Into<String>, priority: i64, risk: RiskClass, pattern: &str) -> Result<Rule, RuleError> {
        let id = id.into();
        let regex = Regex::new(&format!("^(?:{pattern})$"))
            .map_err(|e| RuleError::Pattern { rule_id: id.clone(), source: Box::new(e) })?;
        Ok(Rule { id, priority, risk, pattern: pattern.to_string(), comment: String::new(), regex })
    }

    pub fn with_comment(mut self, comment: impl Into<String>) -> Rule {
        self.comment = comment.into();
        self
    }

    pub fn matches(&self, command: &str) -> bool {
        self.regex.is_match(command)
    }
}

impl PartialEq for Rule {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.priority == other.priority
            && self.risk == other.risk
            && self.pattern == other.pattern
            && self.comment == other.comment
    }
}

/// Outcome of matching one command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub risk: RiskClass,
    /// Matching rule, or `None` when the default action applied.
    pub rule_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
    order: Vec<usize>,
    default_action: RiskClass,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>, default_action: RiskClass) -> Result<RuleSet, RuleError> {
        if default_action == RiskClass::Risky {
            return Err(RuleError::BadDefault(default_action));
        }
        let mut seen: HashMap<i64, &str> = HashMap::new();
        for r in &rules {
            if let Some(first) = seen.insert(r.priority, &r.id) {
                return Err(RuleError::DuplicatePriority {
                    priority: r.priority,
                    first: first.to_string(),
                    second: r.id.clone(),
                });
            }
        }
        let mut order: Vec<usize> = (0..rules.len()).collect();
        order.sort_by_key(|&i| rules[i].priority);
        Ok(RuleSet { rules, order, default_action })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn default_action(&self) -> RiskClass {
        self.default_action
    }

    /// Rules in evaluation order.
    pub fn by_priority(&self) -> impl Iterator<Item = &Rule> {
        self.order.iter().map(|&i| &self.rules[i])
    }

    pub fn match_command(&self, command: &str) -> RuleVerdict {
        self.by_priority()
            .find(|r| r.matches(command))
            .map(|r| RuleVerdict { risk: r.risk, rule_id: Some(r.id.clone()) })
            .unwrap_or(RuleVerdict { risk: self.default_action, rule_id: None })
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("{HEADER} default={}\n", self.default_action);
        for r in &self.rules {
            for line in r.comment.lines() {
                let _ = writeln!(out, "# {line}");
            }
            let _ = writeln!(out, "{} {} {}", r.priority, r.risk, r.pattern);
        }
        out
    }
}

pub fn load_rules(text: &str) -> Result<RuleSet, RuleError> {
    let perr = |line: usize, message: String| RuleError::Parse { line, message };
    let mut default_action = None;
    let mut rules = Vec::new();
    let mut pending_comment: Vec<&str> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim();
        if default_action.is_none() {
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rest = trimmed
                .strip_prefix(HEADER)
                .and_then(|r| r.trim().strip_prefix("default="))
                .ok_or_else(|| perr(no, format!("expected `{HEADER} default=<SAFE|BLOCKED>`")))?;
            let action: RiskClass = rest.trim().parse().map_err(|e| perr(no, format!("{e}")))?;
            if action == RiskClass::Risky {
                return Err(RuleError::BadDefault(action));
            }
            default_action = Some(action);
            continue;
        }
        if trimmed.is_empty() {
            pending_comment.clear();
            continue;
        }
        if let Some(c) = trimmed.strip_prefix('#') {
            pending_comment.push(c.strip_prefix(' ').unwrap_or(c));
            continue;
        }

        let line = line.trim_start();
        let (prio, rest) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| perr(no, "expected `<priority> <class> <pattern>`".into()))?;
        let priority: i64 = prio.parse().map_err(|_| perr(no, format!("bad priority `{prio}`")))?;
        let rest = rest.trim_start();
        let (class, pattern) = rest
            .split_once(char::is_whitespace)
            .ok_or_else(|| perr(no, "missing pattern".into()))?;
        let risk: RiskClass = class.parse().map_err(|e| perr(no, format!("{e}")))?;
        let pattern = pattern.trim_start();
        if pattern.is_empty() {
            return Err(perr(no, "missing pattern".into()));
        }
        let id = format!("R{}", rules.len() + 1);
        let rule = Rule::new(id, priority, risk, pattern)?.with_comment(pending_comment.join("\n"));
        pending_comment.clear();
        rules.push(rule);
    }
    let default_action = default_action.ok_or_else(|| perr(1, "missing header".into()))?;
    RuleSet::new(rules, default_action)
}

/// A model's verdict on one command, as fed to the audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVerdict {
    pub command: String,
    pub risk: RiskClass,
    pub probs: [f64; 3],
}

impl ModelVerdict {
    /// Probability mass on the dangerous classes.
    pub fn danger(&self) -> f64 {
        self.probs[RiskClass::Risky.index()] + self.probs[RiskClass::Blocked.index()]
    }
}

/// One audit report entry: the rule engine and the model disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub command: String,
    pub rule_verdict: RiskClass,
    pub rule_id: Option<String>,
    pub model_verdict: RiskClass,
    pub probs: [f64; 3],
}

/// Commands where the rule verdict and the model verdict differ, most
/// dangerous (by model probability) first. Equal danger keeps input order.
pub fn audit_report(verdicts: &[ModelVerdict], rules: &RuleSet) -> Vec<Discrepancy> {
    let mut out: Vec<(f64, Discrepancy)> = verdicts
        .iter()
        .filter_map(|v| {
            let rv = rules.match_command(&v.command);
            (rv.risk != v.risk).then(|| {
                (
                    v.danger(),
                    Discrepancy {
                        command: v.command.clone(),
                        rule_verdict: rv.risk,
                        rule_id: rv.rule_id,
                        model_verdict: v.risk,
                        probs: v.probs,
                    },
                )
            })
        })
        .collect();
    out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    out.into_iter().map(|(_, d)| d).collect()
}

/// Line-delimited JSON rendering of an audit report.
pub fn render_audit_jsonl(report: &[Discrepancy]) -> String {
    let mut out = String::new();
    for d in report {
        out.push_str(&serde_json::to_string(d).expect("plain data serializes"));
        out.push('\n');
    }
    out
}
