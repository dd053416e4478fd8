use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use reqwest::StatusCode;
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use super::{
    check_finetune_request, EpochMetrics, FinetuneAccepted, FinetuneExample, FinetuneJob,
    FinetuneRequest, FinetuneStatusResponse, GatewayError, HealthResponse, JobStatus,
    ModelBackendConfig, PredictRequest, PredictResponse, Prediction, WireMetrics,
    WEIGHTS_DIGEST_HEADER,
};
use crate::domain::AudioAsset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayOptions {
    pub health_timeout: Duration,
    pub predict_timeout: Duration,
    pub poll_timeout: Duration,
    /// Concurrent predict calls allowed per backend endpoint.
    pub max_concurrent_predicts: usize,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            health_timeout: Duration::from_secs(5),
            predict_timeout: Duration::from_secs(120),
            poll_timeout: Duration::from_secs(10),
            max_concurrent_predicts: 4,
        }
    }
}

/// HTTP client for model backends. Cheap to clone; clones share the
/// connection pool and the per-endpoint predict limits.
#[derive(Clone)]
pub struct Gateway {
    http: reqwest::Client,
    options: GatewayOptions,
    // tokio semaphores hand out permits in FIFO order
    limits: Arc<Mutex<HashMap<String, Arc<Semaphore>>>>,
}

impl Default for Gateway {
    fn default() -> Self {
        Gateway::new(GatewayOptions::default())
    }
}

fn transport_error(err: reqwest::Error, timeout: Duration) -> GatewayError {
    if err.is_timeout() {
        GatewayError::BackendTimeout(timeout)
    } else if err.is_decode() {
        GatewayError::ProtocolViolation(err.to_string())
    } else {
        GatewayError::BackendUnreachable(err.to_string())
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(bytes: &[u8], what: &str) -> Result<T, GatewayError> {
    serde_json::from_slice(bytes)
        .map_err(|e| GatewayError::ProtocolViolation(format!("{what}: {e}")))
}

impl Gateway {
    pub fn new(options: GatewayOptions) -> Self {
        Gateway {
            http: reqwest::Client::new(),
            options,
            limits: Arc::default(),
        }
    }

    pub fn options(&self) -> &GatewayOptions {
        &self.options
    }

    fn limit_for(&self, endpoint: &str) -> Arc<Semaphore> {
        let mut limits = self.limits.lock().expect("limits lock");
        limits
            .entry(endpoint.to_string())
            .or_insert_with(|| {
                Arc::new(Semaphore::new(self.options.max_concurrent_predicts.max(1)))
            })
            .clone()
    }

    async fn send(
        &self,
        request: reqwest::RequestBuilder,
        timeout: Duration,
    ) -> Result<(StatusCode, reqwest::header::HeaderMap, Vec<u8>), GatewayError> {
        let fut = async {
            let response = request.send().await?;
            let status = response.status();
            let headers = response.headers().clone();
            let body = response.bytes().await?;
            Ok::<_, reqwest::Error>((status, headers, body.to_vec()))
        };
        match tokio::time::timeout(timeout, fut).await {
            Err(_) => Err(GatewayError::BackendTimeout(timeout)),
            Ok(result) => result.map_err(|e| transport_error(e, timeout)),
        }
    }

    pub async fn health(
        &self,
        config: &ModelBackendConfig,
    ) -> Result<HealthResponse, GatewayError> {
        let timeout = self.options.health_timeout;
        let url = format!("{}/health", config.base_url());
        let (status, _, body) = self.send(self.http.get(&url), timeout).await?;
        if !status.is_success() {
            return Err(GatewayError::BackendUnreachable(format!(
                "health probe returned {status}"
            )));
        }
        let health: HealthResponse = parse_body(&body, "health response")?;
        if health.status != "ok" {
            return Err(GatewayError::BackendUnreachable(format!(
                "health probe reported {:?}",
                health.status
            )));
        }
        Ok(health)
    }

    /// Sends one audio file for inference and returns the validated
    /// predictions. Any invalid item rejects the whole response.
    pub async fn predict(
        &self,
        config: &ModelBackendConfig,
        asset: &AudioAsset,
        audio: &[u8],
    ) -> Result<Vec<Prediction>, GatewayError> {
        if asset.format != config.input_format {
            return Err(GatewayError::FormatMismatch {
                expected: config.input_format,
                actual: asset.format,
            });
        }
        let limit = self.limit_for(config.base_url());
        let _permit = limit.acquire().await.expect("semaphore never closed");
        self.health(config).await?;

        let body = PredictRequest {
            audio: base64::engine::general_purpose::STANDARD.encode(audio),
            format: asset.format.as_str().to_string(),
            filename: asset.original_filename.clone(),
        };
        let url = format!("{}/predict", config.base_url());
        let started = Instant::now();
        let timeout = self.options.predict_timeout;
        let result = self.send(self.http.post(&url).json(&body), timeout).await;
        let latency_ms = started.elapsed().as_millis();
        let (status, _, bytes) = match result {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(endpoint = %url, asset = %asset.id, latency_ms, error = %e, "predict failed");
                return Err(e);
            }
        };
        tracing::info!(endpoint = %url, asset = %asset.id, status = status.as_u16(), latency_ms, bytes = bytes.len(), "predict");
        if !status.is_success() {
            return Err(GatewayError::ProtocolViolation(format!(
                "predict returned {status}: {}",
                String::from_utf8_lossy(&bytes)
            )));
        }
        let response: PredictResponse = parse_body(&bytes, "predict response")?;
        for (i, p) in response.predictions.iter().enumerate() {
            p.check(Some(config))
                .map_err(|e| GatewayError::ProtocolViolation(format!("predictions[{i}]: {e}")))?;
        }
        Ok(response.predictions)
    }

    pub async fn start_finetune(
        &self,
        config: &ModelBackendConfig,
        epochs: u32,
        learning_rate: f64,
        examples: Vec<FinetuneExample>,
    ) -> Result<FinetuneJob, GatewayError> {
        check_finetune_request(epochs, learning_rate, &examples)?;
        let url = format!("{}/finetune", config.base_url());
        let body = FinetuneRequest {
            epochs,
            learning_rate,
            examples,
        };
        let timeout = self.options.poll_timeout;
        let (status, _, bytes) = self.send(self.http.post(&url).json(&body), timeout).await?;
        if status.is_client_error() {
            return Err(GatewayError::BackendRejectedJob {
                status: status.as_u16(),
                message: rejection_message(&bytes),
            });
        }
        if status != StatusCode::ACCEPTED {
            return Err(GatewayError::ProtocolViolation(format!(
                "finetune returned {status}, expected 202"
            )));
        }
        let accepted: FinetuneAccepted = parse_body(&bytes, "finetune response")?;
        if accepted.job_id.is_empty() {
            return Err(GatewayError::ProtocolViolation("empty job_id".into()));
        }
        Ok(FinetuneJob {
            job_id: accepted.job_id,
            status: JobStatus::Running,
            metrics: Vec::new(),
        })
    }

    /// Reads the backend's view of a job. `requested_epochs` bounds the
    /// metric series when known.
    pub async fn poll_finetune(
        &self,
        config: &ModelBackendConfig,
        job_id: &str,
        requested_epochs: Option<u32>,
    ) -> Result<FinetuneJob, GatewayError> {
        let url = format!("{}/finetune/{job_id}", config.base_url());
        let timeout = self.options.poll_timeout;
        let (status, _, bytes) = self.send(self.http.get(&url), timeout).await?;
        if status.is_client_error() {
            return Err(GatewayError::BackendRejectedJob {
                status: status.as_u16(),
                message: rejection_message(&bytes),
            });
        }
        if !status.is_success() {
            return Err(GatewayError::ProtocolViolation(format!(
                "finetune poll returned {status}"
            )));
        }
        let wire: FinetuneStatusResponse = parse_body(&bytes, "finetune status")?;
        job_from_wire(job_id, wire, requested_epochs)
    }

    /// Downloads the current weights and checks them against the digest
    /// header. Returns the bytes and their hex SHA-256.
    pub async fn download_weights(
        &self,
        config: &ModelBackendConfig,
    ) -> Result<(Vec<u8>, String), GatewayError> {
        let url = format!("{}/weights", config.base_url());
        let timeout = self.options.predict_timeout;
        let (status, headers, bytes) = self.send(self.http.get(&url), timeout).await?;
        if !status.is_success() {
            return Err(GatewayError::ProtocolViolation(format!(
                "weights returned {status}"
            )));
        }
        let declared = headers
            .get(WEIGHTS_DIGEST_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(|s| s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                GatewayError::ProtocolViolation(format!("missing {WEIGHTS_DIGEST_HEADER} header"))
            })?;
        let actual = hex::encode(Sha256::digest(&bytes));
        if declared != actual {
            return Err(GatewayError::ProtocolViolation(format!(
                "weights digest mismatch: header {declared}, body {actual}"
            )));
        }
        Ok((bytes, actual))
    }
}

fn rejection_message(bytes: &[u8]) -> String {
    #[derive(serde::Deserialize)]
    struct ErrorBody {
        #[serde(alias = "message")]
        error: String,
    }
    match serde_json::from_slice::<ErrorBody>(bytes) {
        Ok(b) => b.error,
        Err(_) => String::from_utf8_lossy(bytes).trim().to_string(),
    }
}

fn job_from_wire(
    job_id: &str,
    wire: FinetuneStatusResponse,
    requested_epochs: Option<u32>,
) -> Result<FinetuneJob, GatewayError> {
    let status = match wire.status.as_str() {
        "running" => JobStatus::Running,
        "done" => JobStatus::Done,
        "failed" => JobStatus::Failed,
        other => {
            return Err(GatewayError::ProtocolViolation(format!(
                "unknown job status {other:?}"
            )))
        }
    };
    let WireMetrics { loss, accuracy } = wire.metrics;
    if !accuracy.is_empty() && accuracy.len() != loss.len() {
        return Err(GatewayError::ProtocolViolation(
            "loss and accuracy series differ in length".into(),
        ));
    }
    if let Some(epochs) = requested_epochs {
        if loss.len() > epochs as usize {
            return Err(GatewayError::ProtocolViolation(format!(
                "{} loss entries for {epochs} requested epochs",
                loss.len()
            )));
        }
    }
    if status == JobStatus::Done && loss.is_empty() {
        return Err(GatewayError::ProtocolViolation(
            "job done without metrics".into(),
        ));
    }
    let metrics = loss
        .iter()
        .enumerate()
        .map(|(i, &l)| EpochMetrics {
            epoch: i as u32 + 1,
            loss: l,
            accuracy: accuracy.get(i).copied(),
        })
        .collect();
    Ok(FinetuneJob {
        job_id: job_id.to_string(),
        status,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wire(status: &str, loss: Vec<f64>, accuracy: Vec<f64>) -> FinetuneStatusResponse {
        FinetuneStatusResponse {
            status: status.into(),
            metrics: WireMetrics { loss, accuracy },
        }
    }

    #[test]
    fn poll_document_mapping() {
        let job =
            job_from_wire("j", wire("done", vec![0.5, 0.25], vec![0.6, 0.8]), Some(2)).unwrap();
        assert_eq!(job.status, JobStatus::Done);
        assert_eq!(
            job.metrics[1],
            EpochMetrics {
                epoch: 2,
                loss: 0.25,
                accuracy: Some(0.8)
            }
        );
        assert!(job_from_wire("j", wire("done", vec![], vec![]), None).is_err());
        assert!(job_from_wire("j", wire("paused", vec![], vec![]), None).is_err());
        assert!(job_from_wire("j", wire("running", vec![1.0, 0.5, 0.2], vec![]), Some(2)).is_err());
        assert!(job_from_wire("j", wire("running", vec![1.0], vec![0.1, 0.2]), None).is_err());
    }

    #[test]
    fn rejection_message_prefers_error_field() {
        assert_eq!(
            rejection_message(br#"{"error":"too many epochs"}"#),
            "too many epochs"
        );
        assert_eq!(rejection_message(b"nope\n"), "nope");
    }
}
