//! Append-only JSONL log of prediction records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cmdrisk_core::RiskClass;
use serde::{Deserialize, Serialize};

use crate::policy::{Decision, Privilege};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub risk: RiskClass,
    pub rule_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Microseconds since the Unix epoch; non-decreasing within a log.
    pub timestamp_us: u64,
    pub command: String,
    pub origin: String,
    pub privilege: Privilege,
    /// Absent when the classifier failed.
    pub risk: Option<RiskClass>,
    pub probs: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleOutcome>,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A log line that did not parse. Surfaced to readers, never dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Quarantined {
    pub line: usize,
    pub content: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogEntry {
    Record(PredictionRecord),
    Quarantined(Quarantined),
}

/// Single-writer append handle.
pub struct RecordLog {
    path: PathBuf,
    file: File,
    last_timestamp: u64,
}

impl RecordLog {
    /// Opens (creating if needed) a log for appending. The timestamp floor
    /// continues from the last readable record of an existing regular file.
    pub fn open(path: &Path) -> std::io::Result<RecordLog> {
        let last_timestamp = if path.metadata().is_ok_and(|m| m.is_file()) {
            read_log(path)?
                .iter()
                .filter_map(|e| match e {
                    LogEntry::Record(r) => Some(r.timestamp_us),
                    LogEntry::Quarantined(_) => None,
                })
                .max()
                .unwrap_or(0)
        } else {
            0
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordLog { path: path.to_path_buf(), file, last_timestamp })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Current wall-clock time, clamped so timestamps never go backwards.
    pub fn next_timestamp(&mut self) -> u64 {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0);
        self.last_timestamp = self.last_timestamp.max(now);
        self.last_timestamp
    }

    /// Writes one line and flushes it to the OS before returning.
    pub fn append(&mut self, record: &PredictionRecord) -> std::io::Result<()> {
        self.last_timestamp = self.last_timestamp.max(record.timestamp_us);
        let mut line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()
    }
}

/// Every line in write order.
pub fn read_log(path: &Path) -> std::io::Result<Vec<LogEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let bytes = line?;
        if bytes.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let entry = match std::str::from_utf8(&bytes).map_err(|e| e.to_string()).and_then(|s| {
            serde_json::from_str::<PredictionRecord>(s).map_err(|e| e.to_string())
        }) {
            Ok(r) => LogEntry::Record(r),
            Err(error) => LogEntry::Quarantined(Quarantined {
                line: i + 1,
                content: String::from_utf8_lossy(&bytes).into_owned(),
                error,
            }),
        };
        out.push(entry);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordFilter {
    pub origin: Option<String>,
    /// Matches the model verdict.
    pub verdict: Option<RiskClass>,
    pub decision: Option<Decision>,
    /// Inclusive lower bound, microseconds.
    pub since_us: Option<u64>,
    /// Exclusive upper bound, microseconds.
    pub until_us: Option<u64>,
}

impl RecordFilter {
    pub fn accepts(&self, r: &PredictionRecord) -> bool {
        self.origin.as_ref().is_none_or(|o| &r.origin == o)
            && self.verdict.is_none_or(|v| r.risk == Some(v))
            && self.decision.is_none_or(|d| r.decision == d)
            && self.since_us.is_none_or(|t| r.timestamp_us >= t)
            && self.until_us.is_none_or(|t| r.timestamp_us < t)
    }
}

/// Matching records in write order. Quarantined lines always pass through.
pub fn read_records(path: &Path, filter: &RecordFilter) -> std::io::Result<Vec<LogEntry>> {
    Ok(read_log(path)?
        .into_iter()
        .filter(|e| match e {
            LogEntry::Record(r) => filter.accepts(r),
            LogEntry::Quarantined(_) => true,
        })
        .collect())
}
