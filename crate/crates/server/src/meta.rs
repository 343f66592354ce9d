//! Messages pushed on `/meta`.
//!
//! ```json
//! {"kind": "DETECTIONS", "ts_ns": 123, "payload": { DetectionResult }}
//! {"kind": "METRICS",    "ts_ns": 456, "payload": { PipelineMetrics }}
//! ```
//!
//! `ts_ns` is the ground station's monotonic clock when the message was
//! emitted; it never decreases within one connection.

use aerolink_core::pipeline::PipelineMetrics;
use aerolink_core::DetectionResult;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "UPPERCASE")]
pub enum MetaPayload {
    Detections(DetectionResult),
    Metrics(PipelineMetrics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaMessage {
    pub ts_ns: u64,
    #[serde(flatten)]
    pub body: MetaPayload,
}

impl MetaMessage {
    pub fn kind(&self) -> &'static str {
        match self.body {
            MetaPayload::Detections(_) => "DETECTIONS",
            MetaPayload::Metrics(_) => "METRICS",
        }
    }

    /// One NDJSON line, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("meta message serializes");
        s.push('\n');
        s
    }
}
