//! Online command risk classification: policy, prediction log, request
//! handling, configuration and training glue for the `cmdrisk` tool.

pub mod pipeline;
pub mod policy;
pub mod records;
pub mod service;
pub mod settings;
pub mod trainers;

pub use policy::{decide, Decision, Privilege};
pub use records::{read_log, read_records, LogEntry, PredictionRecord, RecordFilter, RecordLog};
pub use service::{run_audit, ClassifyRequest, ClassifyResponse, Engines, Service};
pub use settings::Settings;
