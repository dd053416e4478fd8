//! One concrete HTTP request per endpoint class, against a project where the
//! annotator owns every resource it touches, so only the role decides.

use auralabel::api::EndpointClass;
use auralabel::gateway::mock::MockBackend;
use auralabel::gateway::Prediction;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

use super::{seed_project, wav, Fixture, TestServer};

pub struct RbacWorld {
    pub server: TestServer,
    pub fixture: Fixture,
    pub outsider: String,
    pub task: String,
    pub region: String,
    pub assets: Vec<String>,
    _backend: MockBackend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    Manager,
    Annotator,
    Reviewer,
    Outsider,
}

impl Actor {
    pub const ALL: [Actor; 4] = [
        Actor::Manager,
        Actor::Annotator,
        Actor::Reviewer,
        Actor::Outsider,
    ];

    pub fn role(self) -> Option<auralabel::domain::Role> {
        use auralabel::domain::Role;
        match self {
            Actor::Manager => Some(Role::Manager),
            Actor::Annotator => Some(Role::Annotator),
            Actor::Reviewer => Some(Role::Reviewer),
            Actor::Outsider => None,
        }
    }
}

impl RbacWorld {
    pub async fn build() -> RbacWorld {
        let server = TestServer::start().await;
        let f = seed_project(&server, &["dog"], false).await;
        let backend = MockBackend::start().await.unwrap();
        backend.set_predictions(vec![Prediction::Segment {
            label: "dog".into(),
            start: 0.1,
            end: 0.3,
            confidence: Some(0.5),
        }]);
        let resp = server
            .http
            .post(format!("{}/api/projects/{}/model", server.url(), f.project))
            .bearer_auth(&f.admin)
            .body(backend.config_yaml(&[("segment", "events")]))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);

        let (_, other) = server
            .call(
                Some(&f.admin),
                Method::POST,
                "/projects",
                Some(json!({"name": "elsewhere", "ontology": ["x"]})),
            )
            .await;
        let other = other["id"].as_str().unwrap().to_string();
        server
            .call(
                Some(&f.admin),
                Method::POST,
                &format!("/projects/{other}/members"),
                Some(json!({"username": "outsider", "role": "annotator", "secret": "o-secret"})),
            )
            .await;
        let outsider = server.login("outsider", "o-secret").await;

        server
            .upload(
                &f.admin,
                &f.project,
                &[("one.wav", wav(1, 1.0)), ("two.wav", wav(2, 1.0))],
            )
            .await;
        server
            .call(
                Some(&f.admin),
                Method::POST,
                &format!("/projects/{}/assign", f.project),
                Some(json!({"strategy": "shared"})),
            )
            .await;
        let (_, tasks) = server
            .call(
                Some(&f.admin),
                Method::GET,
                &format!("/tasks?project={}", f.project),
                None,
            )
            .await;
        let task = tasks[0]["id"].as_str().unwrap().to_string();
        let assets = tasks
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["audio_asset_id"].as_str().unwrap().to_string())
            .collect();
        let (status, saved) = server
            .call(
                Some(&f.a1),
                Method::PUT,
                &format!("/tasks/{task}/annotations"),
                Some(json!({"regions": [{"start_s": 0.1, "end_s": 0.5, "labels": ["dog"]}]})),
            )
            .await;
        assert_eq!(status, StatusCode::OK, "{saved}");
        let region = saved[0]["id"].as_str().unwrap().to_string();
        let (status, _) = server
            .call(
                Some(&f.a1),
                Method::POST,
                &format!("/tasks/{task}/submit"),
                None,
            )
            .await;
        assert_eq!(status, StatusCode::OK);
        RbacWorld {
            server,
            fixture: f,
            outsider,
            task,
            region,
            assets,
            _backend: backend,
        }
    }

    pub fn token(&self, actor: Actor) -> &str {
        match actor {
            Actor::Manager => &self.fixture.admin,
            Actor::Annotator => &self.fixture.a1,
            Actor::Reviewer => &self.fixture.r1,
            Actor::Outsider => &self.outsider,
        }
    }

    /// Issues the representative request for `class` as `actor`.
    pub async fn probe(&self, class: EndpointClass, actor: Actor) -> (StatusCode, Value) {
        let s = &self.server;
        let t = Some(self.token(actor));
        let p = &self.fixture.project;
        let task = &self.task;
        let region = &self.region;
        match class {
            EndpointClass::ReadProject => {
                s.call(t, Method::GET, &format!("/projects/{p}"), None)
                    .await
            }
            EndpointClass::ManageMembers => {
                s.call(
                    t,
                    Method::POST,
                    &format!("/projects/{p}/members"),
                    Some(json!({"username": "a1", "role": "annotator"})),
                )
                .await
            }
            EndpointClass::IngestTasks => {
                s.upload(self.token(actor), p, &[("one.wav", wav(1, 1.0))])
                    .await
            }
            EndpointClass::AssignTasks => {
                s.call(
                    t,
                    Method::POST,
                    &format!("/projects/{p}/assign"),
                    Some(json!({"strategy": "shared"})),
                )
                .await
            }
            EndpointClass::ListTasks => {
                s.call(t, Method::GET, &format!("/tasks?project={p}"), None)
                    .await
            }
            EndpointClass::TriggerPredict => {
                s.call(t, Method::POST, &format!("/tasks/{task}/predict"), None)
                    .await
            }
            EndpointClass::WriteAnnotations => {
                s.call(
                    t,
                    Method::PUT,
                    &format!("/tasks/{task}/annotations"),
                    Some(json!({"regions": []})),
                )
                .await
            }
            EndpointClass::SubmitTask => {
                s.call(t, Method::POST, &format!("/tasks/{task}/submit"), None)
                    .await
            }
            EndpointClass::ReadAnnotations => {
                s.call(t, Method::GET, &format!("/annotations/{region}"), None)
                    .await
            }
            EndpointClass::ReviewAnnotation => {
                s.call(
                    t,
                    Method::POST,
                    &format!("/annotations/{region}/review"),
                    Some(json!({"verdict": "approve"})),
                )
                .await
            }
            EndpointClass::ConfigureModel => {
                s.call(t, Method::GET, &format!("/projects/{p}/model/status"), None)
                    .await
            }
            EndpointClass::Export => {
                s.call(t, Method::GET, &format!("/projects/{p}/export"), None)
                    .await
            }
            EndpointClass::ReadAgreement => {
                s.call(t, Method::GET, &format!("/projects/{p}/agreement"), None)
                    .await
            }
            EndpointClass::SubmitPreference => {
                s.call(
                    t,
                    Method::POST,
                    &format!("/projects/{p}/preferences"),
                    Some(
                        json!({"item_a": self.assets[0], "item_b": self.assets[1], "winner": "a"}),
                    ),
                )
                .await
            }
            EndpointClass::ReadRanking => {
                s.call(t, Method::GET, &format!("/projects/{p}/ranking"), None)
                    .await
            }
        }
    }
}

/// Expected 403 body for a denied pair, or None when the pair is allowed.
pub fn expected_denial(
    matrix: &auralabel::api::PermissionMatrix,
    class: EndpointClass,
    actor: Actor,
) -> Option<Value> {
    match actor.role() {
        None => Some(json!({"error": "forbidden", "reason": "not_member"})),
        Some(role) if !matrix.allows(role, class) => {
            Some(json!({"error": "forbidden", "reason": "role_denied"}))
        }
        Some(_) => None,
    }
}

/// The declared table, written out independently of the matrix code.
pub const DECLARED: &[(&str, [bool; 3])] = &[
    // (class, [manager, annotator, reviewer])
    ("read_project", [true, true, true]),
    ("manage_members", [true, false, false]),
    ("ingest_tasks", [true, false, false]),
    ("assign_tasks", [true, false, false]),
    ("list_tasks", [true, true, true]),
    ("trigger_predict", [false, true, false]),
    ("write_annotations", [false, true, false]),
    ("submit_task", [false, true, false]),
    ("read_annotations", [true, true, true]),
    ("review_annotation", [true, false, true]),
    ("configure_model", [true, false, false]),
    ("export", [true, false, false]),
    ("read_agreement", [true, false, false]),
    ("submit_preference", [true, true, true]),
    ("read_ranking", [true, false, true]),
];
