//! In-process backend speaking the wire protocol, for tests and examples.
//!
//! ```no_run
//! # async fn demo() -> std::io::Result<()> {
//! use auralabel::gateway::mock::MockBackend;
//! use auralabel::gateway::Prediction;
//!
//! let backend = MockBackend::start().await?;
//! backend.set_predictions(vec![Prediction::Segment {
//!     label: "speech".into(),
//!     start: 0.5,
//!     end: 2.0,
//!     confidence: Some(0.9),
//! }]);
//! let yaml = backend.config_yaml(&[("segment", "Events")]);
//! # let _ = yaml;
//! # Ok(())
//! # }
//! ```

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;

use super::{
    FinetuneAccepted, FinetuneRequest, FinetuneStatusResponse, HealthResponse, PredictRequest,
    PredictResponse, Prediction, WireMetrics, WEIGHTS_DIGEST_HEADER,
};
use crate::storage::wav::parse_wav_header;

/// How `/predict` misbehaves, if at all.
#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    Normal,
    /// 200 with a `text/plain` body.
    PlainText,
    /// Sleep before answering normally.
    Delay(Duration),
    /// 200 with JSON that does not match the response schema.
    Garbage,
    /// `/finetune` answers 400 with this message.
    RejectFinetune(String),
    /// `/health` answers 503.
    Unhealthy,
}

#[derive(Debug, Clone)]
struct Job {
    epochs: u32,
    reported: u32,
}

struct MockState {
    model: String,
    predictions: Mutex<Vec<Prediction>>,
    behavior: Mutex<Behavior>,
    jobs: Mutex<HashMap<String, Job>>,
    predict_requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    finetune_requests: Mutex<Vec<FinetuneRequest>>,
}

pub struct MockBackend {
    addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: Option<oneshot::Sender<()>>,
}

/// Deterministic placeholder weights.
pub fn mock_weights() -> Vec<u8> {
    let mut out = Vec::with_capacity(32 * 128);
    let mut block = Sha256::digest(b"mock weights").to_vec();
    for _ in 0..128 {
        out.extend_from_slice(&block);
        block = Sha256::digest(&block).to_vec();
    }
    out
}

/// Loss after `epoch` epochs (1-based); strictly decreasing.
pub fn mock_loss(epoch: u32) -> f64 {
    1.0 / (1.0 + epoch as f64)
}

pub fn mock_accuracy(epoch: u32) -> f64 {
    1.0 - 0.5 / (1.0 + epoch as f64)
}

impl MockBackend {
    /// Binds an ephemeral localhost port and serves until dropped.
    pub async fn start() -> std::io::Result<MockBackend> {
        Self::start_named("mock-backend").await
    }

    pub async fn start_named(model: &str) -> std::io::Result<MockBackend> {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let state = Arc::new(MockState {
            model: model.to_string(),
            predictions: Mutex::new(Vec::new()),
            behavior: Mutex::new(Behavior::Normal),
            jobs: Mutex::new(HashMap::new()),
            predict_requests: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            finetune_requests: Mutex::new(Vec::new()),
        });
        let app = Router::new()
            .route("/health", get(health))
            .route("/predict", post(predict))
            .route("/finetune", post(finetune))
            .route("/finetune/{job_id}", get(poll))
            .route("/weights", get(weights))
            .with_state(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockBackend {
            addr,
            state,
            shutdown: Some(tx),
        })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// A YAML declaration pointing at this backend. `outputs` are
    /// `(type, label)` pairs.
    pub fn config_yaml(&self, outputs: &[(&str, &str)]) -> String {
        let mut yaml = format!(
            "name: \"{}\"\nimage: \"local/mock-backend:test\"\nendpoint: \"{}\"\ninput_schema: {{ \"audio\": \"wav\" }}\noutput_schema:\n",
            self.state.model,
            self.endpoint()
        );
        for (t, l) in outputs {
            yaml.push_str(&format!(
                "  - {{ \"type\": \"{t}\", \"label\": \"{l}\" }}\n"
            ));
        }
        yaml
    }

    pub fn set_predictions(&self, predictions: Vec<Prediction>) {
        *self.state.predictions.lock().unwrap() = predictions;
    }

    pub fn set_behavior(&self, behavior: Behavior) {
        *self.state.behavior.lock().unwrap() = behavior;
    }

    pub fn predict_requests(&self) -> usize {
        self.state.predict_requests.load(Ordering::SeqCst)
    }

    /// Highest number of `/predict` calls observed in progress at once.
    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn finetune_requests(&self) -> Vec<FinetuneRequest> {
        self.state.finetune_requests.lock().unwrap().clone()
    }
}

impl Drop for MockBackend {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

fn behavior(state: &MockState) -> Behavior {
    state.behavior.lock().unwrap().clone()
}

fn bad_request(message: impl Into<String>) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(serde_json::json!({ "error": message.into() })),
    )
        .into_response()
}

async fn health(State(state): State<Arc<MockState>>) -> Response {
    if behavior(&state) == Behavior::Unhealthy {
        return (StatusCode::SERVICE_UNAVAILABLE, "unhealthy").into_response();
    }
    Json(HealthResponse {
        status: "ok".into(),
        model: state.model.clone(),
    })
    .into_response()
}

struct InFlight<'a>(&'a MockState);

impl<'a> InFlight<'a> {
    fn enter(state: &'a MockState) -> Self {
        let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        state.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(state)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn predict(State(state): State<Arc<MockState>>, body: Bytes) -> Response {
    state.predict_requests.fetch_add(1, Ordering::SeqCst);
    let _guard = InFlight::enter(&state);
    let request: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("malformed request: {e}")),
    };
    let audio = match base64::engine::general_purpose::STANDARD.decode(request.audio.as_bytes()) {
        Ok(a) => a,
        Err(e) => return bad_request(format!("audio is not base64: {e}")),
    };
    match request.format.as_str() {
        "wav" => {
            if let Err(e) = parse_wav_header(&audio) {
                return bad_request(e.to_string());
            }
        }
        "mp3" if !audio.is_empty() => {}
        other => return bad_request(format!("unsupported format {other:?}")),
    }
    match behavior(&state) {
        Behavior::PlainText => return (StatusCode::OK, "speech 0.5 2.0").into_response(),
        Behavior::Garbage => {
            return Json(serde_json::json!({ "predictions": "none" })).into_response()
        }
        Behavior::Delay(d) => tokio::time::sleep(d).await,
        _ => {}
    }
    let predictions = state.predictions.lock().unwrap().clone();
    Json(PredictResponse { predictions }).into_response()
}

async fn finetune(State(state): State<Arc<MockState>>, body: Bytes) -> Response {
    let request: FinetuneRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("malformed request: {e}")),
    };
    if let Behavior::RejectFinetune(message) = behavior(&state) {
        return bad_request(message);
    }
    if request.epochs == 0 || request.learning_rate.is_nan() || request.learning_rate <= 0.0 {
        return bad_request("epochs and learning_rate must be positive");
    }
    let mut jobs = state.jobs.lock().unwrap();
    let job_id = format!("job-{}", jobs.len() + 1);
    jobs.insert(
        job_id.clone(),
        Job {
            epochs: request.epochs,
            reported: 0,
        },
    );
    state.finetune_requests.lock().unwrap().push(request);
    (StatusCode::ACCEPTED, Json(FinetuneAccepted { job_id })).into_response()
}

/// Each poll completes one more epoch.
async fn poll(State(state): State<Arc<MockState>>, Path(job_id): Path<String>) -> Response {
    let mut jobs = state.jobs.lock().unwrap();
    let Some(job) = jobs.get_mut(&job_id) else {
        return (
            StatusCode::NOT_FOUND,
            Json(serde_json::json!({ "error": "unknown job" })),
        )
            .into_response();
    };
    job.reported = (job.reported + 1).min(job.epochs);
    let done = job.reported == job.epochs;
    Json(FinetuneStatusResponse {
        status: if done { "done" } else { "running" }.into(),
        metrics: WireMetrics {
            loss: (1..=job.reported).map(mock_loss).collect(),
            accuracy: (1..=job.reported).map(mock_accuracy).collect(),
        },
    })
    .into_response()
}

async fn weights() -> Response {
    let bytes = mock_weights();
    let digest = hex::encode(Sha256::digest(&bytes));
    (
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (
                header::HeaderName::from_static(WEIGHTS_DIGEST_HEADER),
                digest,
            ),
        ],
        bytes,
    )
        .into_response()
}
