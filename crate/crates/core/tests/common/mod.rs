#![allow(dead_code)]

pub mod caption;
pub mod durability;
pub mod gateway;
pub mod rbac;

use std::net::SocketAddr;
use std::path::PathBuf;

use std::sync::Arc;

use auralabel::api::{router, serve, ServeOptions, Service, ServiceConfig};
use auralabel::storage::wav::encode_pcm16_mono;
use auralabel::storage::Store;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub const ADMIN: &str = "admin";
pub const ADMIN_SECRET: &str = "admin-secret";

/// A server on an ephemeral port, backed by a temporary data directory.
pub struct TestServer {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    pub http: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<()>>,
    _tmp: Option<tempfile::TempDir>,
}

impl TestServer {
    pub async fn start() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("data");
        let mut s = Self::start_in(dir).await;
        s._tmp = Some(tmp);
        s
    }

    pub async fn start_in(data_dir: PathBuf) -> Self {
        Self::start_with(data_dir, ServiceConfig::default()).await
    }

    pub async fn start_with(data_dir: PathBuf, config: ServiceConfig) -> Self {
        let (ready_tx, ready_rx) = oneshot::channel();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let options = ServeOptions {
            listen: "127.0.0.1:0".parse().unwrap(),
            data_dir: data_dir.clone(),
            config,
            bootstrap: Some((ADMIN.into(), ADMIN_SECRET.into())),
        };
        let handle = tokio::spawn(async move {
            serve(options, Some(ready_tx), async {
                let _ = stop_rx.await;
            })
            .await
            .expect("server runs");
        });
        let addr = ready_rx.await.expect("server ready");
        TestServer {
            addr,
            data_dir,
            http: reqwest::Client::new(),
            stop: Some(stop_tx),
            handle: Some(handle),
            _tmp: None,
        }
    }

    /// Serves a `Service` the test keeps a handle to, so it can inspect the
    /// store directly.
    pub async fn start_embedded(config: ServiceConfig) -> (Self, Arc<Service>) {
        let tmp = tempfile::tempdir().unwrap();
        let data_dir = tmp.path().join("data");
        let store = Arc::new(Store::open(&data_dir).unwrap());
        let service = Arc::new(Service::new(store, &config));
        service.ensure_user(ADMIN, ADMIN_SECRET).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let app = router(service.clone());
        let handle = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
        });
        let server = TestServer {
            addr,
            data_dir,
            http: reqwest::Client::new(),
            stop: Some(stop_tx),
            handle: Some(handle),
            _tmp: Some(tmp),
        };
        (server, service)
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Graceful shutdown; releases the data directory lock.
    pub async fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            h.await.unwrap();
        }
    }

    pub async fn call(
        &self,
        token: Option<&str>,
        method: Method,
        path: &str,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = self
            .http
            .request(method, format!("{}/api{path}", self.url()));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        (status, value)
    }

    pub async fn raw(
        &self,
        token: &str,
        path: &str,
    ) -> (StatusCode, reqwest::header::HeaderMap, String) {
        let resp = self
            .http
            .get(format!("{}/api{path}", self.url()))
            .bearer_auth(token)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        (status, headers, resp.text().await.unwrap())
    }

    pub async fn login(&self, username: &str, secret: &str) -> String {
        let (status, body) = self
            .call(
                None,
                Method::POST,
                "/auth/login",
                Some(json!({"username": username, "secret": secret})),
            )
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body["token"].as_str().unwrap().to_string()
    }

    pub async fn upload(
        &self,
        token: &str,
        project: &str,
        files: &[(&str, Vec<u8>)],
    ) -> (StatusCode, Value) {
        let mut form = reqwest::multipart::Form::new();
        for (name, bytes) in files {
            form = form.part(
                "file",
                reqwest::multipart::Part::bytes(bytes.clone()).file_name(name.to_string()),
            );
        }
        let resp = self
            .http
            .post(format!("{}/api/projects/{project}/tasks", self.url()))
            .bearer_auth(token)
            .multipart(form)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }
}

/// A short mono WAV whose bytes depend on `seed`, so digests differ.
pub fn wav(seed: u16, seconds: f64) -> Vec<u8> {
    let rate = 8_000u32;
    let n = (rate as f64 * seconds) as usize;
    let samples: Vec<i16> = (0..n)
        .map(|i| ((i as u32 * (seed as u32 + 1)) % 2000) as i16 - 1000)
        .collect();
    encode_pcm16_mono(rate, &samples)
}

/// Ids and tokens of a seeded project: one manager (admin), annotators
/// a1, a2, reviewer r1.
pub struct Fixture {
    pub admin: String,
    pub project: String,
    pub a1: String,
    pub a2: String,
    pub r1: String,
    pub a1_id: String,
    pub a2_id: String,
    pub r1_id: String,
}

pub async fn seed_project(
    server: &TestServer,
    ontology: &[&str],
    grounding_required: bool,
) -> Fixture {
    let admin = server.login(ADMIN, ADMIN_SECRET).await;
    let (status, project) = server
        .call(
            Some(&admin),
            Method::POST,
            "/projects",
            Some(json!({"name": "Field Recordings", "ontology": ontology, "grounding_required": grounding_required})),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{project}");
    let project = project["id"].as_str().unwrap().to_string();
    let mut ids = Vec::new();
    for (name, role) in [("a1", "annotator"), ("a2", "annotator"), ("r1", "reviewer")] {
        let (status, m) = server
            .call(
                Some(&admin),
                Method::POST,
                &format!("/projects/{project}/members"),
                Some(json!({"username": name, "role": role, "secret": format!("{name}-secret")})),
            )
            .await;
        assert_eq!(status, StatusCode::OK, "{m}");
        ids.push(m["user_id"].as_str().unwrap().to_string());
    }
    Fixture {
        a1: server.login("a1", "a1-secret").await,
        a2: server.login("a2", "a2-secret").await,
        r1: server.login("r1", "r1-secret").await,
        admin,
        project,
        a1_id: ids[0].clone(),
        a2_id: ids[1].clone(),
        r1_id: ids[2].clone(),
    }
}
