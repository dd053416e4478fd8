//! Drives `/tasks/{id}/predict` into each gateway failure and records the
//! store digest around the call.

use std::sync::Arc;
use std::time::Duration;

use auralabel::api::{Service, ServiceConfig};
use auralabel::gateway::mock::{Behavior, MockBackend};
use auralabel::gateway::{GatewayOptions, Prediction};
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

use super::{seed_project, wav, Fixture, TestServer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Unreachable,
    Timeout,
    SchemaViolation,
    PlainText,
    InvertedInterval,
}

impl Failure {
    pub const ALL: [Failure; 5] = [
        Failure::Unreachable,
        Failure::Timeout,
        Failure::SchemaViolation,
        Failure::PlainText,
        Failure::InvertedInterval,
    ];

    pub fn expected(self) -> (StatusCode, &'static str) {
        match self {
            Failure::Unreachable => (StatusCode::BAD_GATEWAY, "backend_unreachable"),
            Failure::Timeout => (StatusCode::GATEWAY_TIMEOUT, "backend_timeout"),
            Failure::SchemaViolation | Failure::PlainText | Failure::InvertedInterval => {
                (StatusCode::BAD_GATEWAY, "protocol_violation")
            }
        }
    }
}

pub struct Outcome {
    pub status: StatusCode,
    pub body: Value,
    pub digest_before: String,
    pub digest_after: String,
    pub staged_after: usize,
}

pub struct GatewayWorld {
    pub server: TestServer,
    pub service: Arc<Service>,
    pub fixture: Fixture,
    pub backend: MockBackend,
    pub task: String,
}

impl GatewayWorld {
    pub async fn build() -> GatewayWorld {
        let config = ServiceConfig {
            gateway: GatewayOptions {
                health_timeout: Duration::from_millis(500),
                predict_timeout: Duration::from_millis(300),
                poll_timeout: Duration::from_millis(500),
                max_concurrent_predicts: 4,
            },
            ..ServiceConfig::default()
        };
        let (server, service) = TestServer::start_embedded(config).await;
        let fixture = seed_project(&server, &["dog"], false).await;
        let backend = MockBackend::start().await.unwrap();
        server
            .upload(
                &fixture.admin,
                &fixture.project,
                &[("clip.wav", wav(3, 2.0))],
            )
            .await;
        server
            .call(
                Some(&fixture.admin),
                Method::POST,
                &format!("/projects/{}/assign", fixture.project),
                Some(json!({"strategy": "shared"})),
            )
            .await;
        let (_, tasks) = server
            .call(Some(&fixture.a1), Method::GET, "/tasks", None)
            .await;
        let task = tasks[0]["id"].as_str().unwrap().to_string();
        // some committed annotation work, so the digest covers real data
        server
            .call(
                Some(&fixture.a1),
                Method::PUT,
                &format!("/tasks/{task}/annotations"),
                Some(json!({"regions": [{"start_s": 0.2, "end_s": 0.9, "labels": ["dog"]}]})),
            )
            .await;
        GatewayWorld {
            server,
            service,
            fixture,
            backend,
            task,
        }
    }

    async fn configure(&self, yaml: String) {
        let resp = self
            .server
            .http
            .post(format!(
                "{}/api/projects/{}/model",
                self.server.url(),
                self.fixture.project
            ))
            .bearer_auth(&self.fixture.admin)
            .body(yaml)
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
    }

    async fn staged(&self) -> usize {
        let (_, staged) = self
            .server
            .call(
                Some(&self.fixture.a1),
                Method::GET,
                &format!("/tasks/{}/staged", self.task),
                None,
            )
            .await;
        staged["items"].as_array().map_or(0, Vec::len)
    }

    pub async fn run(&self, failure: Failure) -> Outcome {
        self.backend.set_behavior(Behavior::Normal);
        self.backend.set_predictions(vec![Prediction::Segment {
            label: "dog".into(),
            start: 0.1,
            end: 0.5,
            confidence: Some(0.7),
        }]);
        let good = self.backend.config_yaml(&[("segment", "events")]);
        match failure {
            Failure::Unreachable => {
                let closed = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
                let port = closed.local_addr().unwrap().port();
                drop(closed);
                self.configure(good.replace(
                    &self.backend.endpoint(),
                    &format!("http://127.0.0.1:{port}"),
                ))
                .await;
            }
            Failure::Timeout => {
                self.configure(good).await;
                self.backend
                    .set_behavior(Behavior::Delay(Duration::from_millis(1500)));
            }
            Failure::SchemaViolation => {
                self.configure(good).await;
                self.backend.set_behavior(Behavior::Garbage);
            }
            Failure::PlainText => {
                self.configure(good).await;
                self.backend.set_behavior(Behavior::PlainText);
            }
            Failure::InvertedInterval => {
                self.configure(good).await;
                self.backend.set_predictions(vec![Prediction::Segment {
                    label: "dog".into(),
                    start: 1.5,
                    end: 0.5,
                    confidence: None,
                }]);
            }
        }
        let digest_before = self.service.store().digest();
        let (status, body) = self
            .server
            .call(
                Some(&self.fixture.a1),
                Method::POST,
                &format!("/tasks/{}/predict", self.task),
                None,
            )
            .await;
        let digest_after = self.service.store().digest();
        Outcome {
            status,
            body,
            digest_before,
            digest_after,
            staged_after: self.staged().await,
        }
    }
}
