//! Model backends: YAML declarations, the HTTP wire protocol, conversion of
//! predictions into editable regions, an in-process mock backend and a
//! conformance probe.

mod client;
mod config;
mod conformance;
mod convert;
pub mod mock;
mod protocol;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{Gateway, GatewayOptions};
pub use config::{
    parse_config, serialize_config, ConfigError, ModelBackendConfig, OutputDecl, OutputType,
};
pub use conformance::{conformance_probe, CheckResult, ConformanceReport, CONFORMANCE_CHECKS};
pub use convert::{predictions_to_regions, Conversion, SkippedPrediction};
pub use protocol::{
    FinetuneAccepted, FinetuneExample, FinetuneRequest, FinetuneStatusResponse, HealthResponse,
    PredictRequest, PredictResponse, Prediction, WireMetrics, WEIGHTS_DIGEST_HEADER,
};

use crate::domain::AudioFormat;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("backend timed out after {}s", .0.as_secs_f64())]
    BackendTimeout(Duration),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("format mismatch: backend expects {expected}, asset is {actual}")]
    FormatMismatch {
        expected: AudioFormat,
        actual: AudioFormat,
    },
    #[error("backend rejected job ({status}): {message}")]
    BackendRejectedJob { status: u16, message: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl GatewayError {
    /// Stable machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            GatewayError::BackendUnreachable(_) => "backend_unreachable",
            GatewayError::BackendTimeout(_) => "backend_timeout",
            GatewayError::ProtocolViolation(_) => "protocol_violation",
            GatewayError::FormatMismatch { .. } => "format_mismatch",
            GatewayError::BackendRejectedJob { .. } => "backend_rejected_job",
            GatewayError::Precondition(_) => "precondition_failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneJob {
    pub job_id: String,
    pub status: JobStatus,
    pub metrics: Vec<EpochMetrics>,
}

/// Checks run before any fine-tune request leaves the process.
pub fn check_finetune_request(
    epochs: u32,
    learning_rate: f64,
    examples: &[FinetuneExample],
) -> Result<(), GatewayError> {
    if epochs == 0 {
        return Err(GatewayError::Precondition(
            "epochs must be a positive integer".into(),
        ));
    }
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(GatewayError::Precondition(
            "learning_rate must be a positive real".into(),
        ));
    }
    let unapproved = examples.iter().any(|e| match e {
        FinetuneExample::Region(r) => r.status != crate::domain::RegionStatus::Approved,
        FinetuneExample::Caption(_) => false,
    });
    if unapproved {
        return Err(GatewayError::Precondition(
            "unapproved data in fine-tune set".into(),
        ));
    }
    Ok(())
}
