//! Request handling: classify, apply policy, persist, respond.

use std::io::{BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use cmdrisk_core::rules::{audit_report, Discrepancy, ModelVerdict};
use cmdrisk_core::{RiskClass, RiskModel, RuleSet};
use serde::{Deserialize, Serialize};

use crate::policy::{decide, Decision, Privilege};
use crate::records::{PredictionRecord, RecordLog, RuleOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub cmd: String,
    #[serde(rename = "priv")]
    pub privilege: Privilege,
    #[serde(default)]
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    /// `None` when the classifier failed.
    pub risk: Option<RiskClass>,
    pub decision: Decision,
    pub probs: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleOutcome>,
    pub latency_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Immutable classification state, swapped as a whole.
pub struct Engines {
    pub model: Arc<dyn RiskModel>,
    pub rules: Option<RuleSet>,
}

pub struct Service {
    engines: RwLock<Arc<Engines>>,
    log: Mutex<RecordLog>,
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "classifier panicked".to_string()
    }
}

fn check_probs(probs: &[f64; 3]) -> Result<(), String> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(format!("classifier returned invalid probabilities {probs:?}"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(format!("classifier probabilities sum to {sum}"));
    }
    Ok(())
}

impl Service {
    pub fn new(engines: Engines, log: RecordLog) -> Service {
        Service { engines: RwLock::new(Arc::new(engines)), log: Mutex::new(log) }
    }

    /// Replaces model and rules atomically between requests.
    pub fn swap(&self, engines: Engines) {
        *self.engines.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(engines);
    }

    fn engines(&self) -> Arc<Engines> {
        self.engines.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Classifies, decides and appends one record before returning. Any
    /// internal failure yields BLOCK.
    pub fn handle_request(&self, req: &ClassifyRequest) -> ClassifyResponse {
        let start = Instant::now();
        let engines = self.engines();
        let mut error = None;
        let (risk, probs) = match catch_unwind(AssertUnwindSafe(|| engines.model.predict(&req.cmd))) {
            Ok(p) => match check_probs(&p.probs) {
                Ok(()) => (Some(p.risk), Some(p.probs)),
                Err(e) => {
                    error = Some(e);
                    (None, None)
                }
            },
            Err(payload) => {
                error = Some(format!("classifier failed: {}", panic_message(payload.as_ref())));
                (None, None)
            }
        };
        let rule = engines.rules.as_ref().and_then(|rs| {
            match catch_unwind(AssertUnwindSafe(|| rs.match_command(&req.cmd))) {
                Ok(v) => Some(RuleOutcome { risk: v.risk, rule_id: v.rule_id }),
                Err(payload) => {
                    error.get_or_insert_with(|| format!("rule engine failed: {}", panic_message(payload.as_ref())));
                    None
                }
            }
        });
        let mut decision = match risk {
            Some(r) if error.is_none() => decide(r, req.privilege),
            _ => Decision::Block,
        };

        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        let record = PredictionRecord {
            timestamp_us: log.next_timestamp(),
            command: req.cmd.clone(),
            origin: req.origin.clone(),
            privilege: req.privilege,
            risk,
            probs,
            rule: rule.clone(),
            decision,
            error: error.clone(),
        };
        if let Err(e) = log.append(&record) {
            log::error!("prediction log {}: {e}", log.path().display());
            decision = Decision::Block;
            error = Some(format!("log write failed: {e}"));
        }
        drop(log);
        ClassifyResponse { risk, decision, probs, rule, latency_us: start.elapsed().as_micros() as u64, error }
    }

    /// Serves newline-delimited JSON requests until end of input. Lines that
    /// are not valid requests are answered with BLOCK and logged.
    pub fn serve_stream<R: BufRead, W: Write>(&self, input: R, mut output: W) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let response = match serde_json::from_str::<ClassifyRequest>(&line) {
                Ok(req) => self.handle_request(&req),
                Err(e) => self.reject(&line, format!("bad request: {e}")),
            };
            serde_json::to_writer(&mut output, &response)?;
            output.write_all(b"\n")?;
            output.flush()?;
        }
        Ok(())
    }

    fn reject(&self, raw: &str, message: String) -> ClassifyResponse {
        let start = Instant::now();
        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        let record = PredictionRecord {
            timestamp_us: log.next_timestamp(),
            command: raw.to_string(),
            origin: String::new(),
            privilege: Privilege::Standard,
            risk: None,
            probs: None,
            rule: None,
            decision: Decision::Block,
            error: Some(message.clone()),
        };
        let error = match log.append(&record) {
            Ok(()) => message,
            Err(e) => format!("{message}; log write failed: {e}"),
        };
        ClassifyResponse {
            risk: None,
            decision: Decision::Block,
            probs: None,
            rule: None,
            latency_us: start.elapsed().as_micros() as u64,
            error: Some(error),
        }
    }

    /// Accepts connections on a Unix socket, one thread per connection.
    #[cfg(unix)]
    pub fn serve_unix(self: Arc<Self>, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::BufReader;
        use std::os::unix::net::UnixListener;

        let listener = UnixListener::bind(path)?;
        for conn in listener.incoming() {
            let conn = conn?;
            let svc = Arc::clone(&self);
            std::thread::spawn(move || {
                let reader = match conn.try_clone() {
                    Ok(c) => BufReader::new(c),
                    Err(e) => {
                        log::warn!("connection: {e}");
                        return;
                    }
                };
                if let Err(e) = svc.serve_stream(reader, conn) {
                    log::warn!("connection closed: {e}");
                }
            });
        }
        Ok(())
    }
}

/// Disagreements between the model and the rules over `commands`, most
/// dangerous first.
pub fn run_audit(commands: &[String], model: &dyn RiskModel, rules: &RuleSet) -> Vec<Discrepancy> {
    let verdicts: Vec<ModelVerdict> = commands
        .iter()
        .map(|c| {
            let p = model.predict(c);
            ModelVerdict { command: c.clone(), risk: p.risk, probs: p.probs }
        })
        .collect();
    audit_report(&verdicts, rules)
}
