mod common;

use std::time::Duration;

use auralabel::gateway::conformance_probe;
use common::gateway::{Failure, GatewayWorld};
use reqwest::{Method, StatusCode};

#[tokio::test]
async fn failures_leave_the_store_alone() {
    let world = GatewayWorld::build().await;
    for failure in Failure::ALL {
        let out = world.run(failure).await;
        let (status, code) = failure.expected();
        assert_eq!(out.status, status, "{failure:?}: {}", out.body);
        assert_eq!(out.body["error"], code, "{failure:?}");
        assert_eq!(
            out.digest_before, out.digest_after,
            "{failure:?} touched the store"
        );
        assert_eq!(out.staged_after, 0, "{failure:?} staged something");
    }
}

#[tokio::test]
async fn a_failure_keeps_earlier_stage() {
    let world = GatewayWorld::build().await;
    // first call succeeds and stages one prediction
    let yaml = world.backend.config_yaml(&[("segment", "events")]);
    let resp = world
        .server
        .http
        .post(format!(
            "{}/api/projects/{}/model",
            world.server.url(),
            world.fixture.project
        ))
        .bearer_auth(&world.fixture.admin)
        .body(yaml)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    world
        .backend
        .set_predictions(vec![auralabel::gateway::Prediction::Segment {
            label: "dog".into(),
            start: 0.0,
            end: 1.0,
            confidence: None,
        }]);
    let (status, _) = world
        .server
        .call(
            Some(&world.fixture.a1),
            Method::POST,
            &format!("/tasks/{}/predict", world.task),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    world
        .backend
        .set_behavior(auralabel::gateway::mock::Behavior::Garbage);
    let before = world.service.store().digest();
    let (status, _) = world
        .server
        .call(
            Some(&world.fixture.a1),
            Method::POST,
            &format!("/tasks/{}/predict", world.task),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(before, world.service.store().digest());
    let (_, staged) = world
        .server
        .call(
            Some(&world.fixture.a1),
            Method::GET,
            &format!("/tasks/{}/staged", world.task),
            None,
        )
        .await;
    assert_eq!(staged["items"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn mock_passes_conformance() {
    let backend = auralabel::gateway::mock::MockBackend::start()
        .await
        .unwrap();
    let report = conformance_probe(&backend.endpoint(), Duration::from_secs(5)).await;
    assert!(report.passed(), "{}", report.render());
}

#[tokio::test]
async fn model_lifecycle_over_http() {
    let world = GatewayWorld::build().await;
    let s = &world.server;
    let f = &world.fixture;
    let yaml = world.backend.config_yaml(&[("segment", "events")]);
    s.http
        .post(format!("{}/api/projects/{}/model", s.url(), f.project))
        .bearer_auth(&f.admin)
        .body(yaml)
        .send()
        .await
        .unwrap();
    let (status, body) = s
        .call(
            Some(&f.admin),
            Method::POST,
            &format!("/projects/{}/model/finetune", f.project),
            Some(serde_json::json!({"epochs": 0, "learning_rate": 0.001})),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (status, body) = s
        .call(
            Some(&f.admin),
            Method::POST,
            &format!("/projects/{}/model/finetune", f.project),
            Some(serde_json::json!({"epochs": 2, "learning_rate": 0.001})),
        )
        .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    assert_eq!(body["job"]["status"], "running");
    // nothing approved yet, so the job was started on an empty set
    assert_eq!(world.backend.finetune_requests()[0].examples.len(), 0);
    let mut last = serde_json::Value::Null;
    for _ in 0..4 {
        let (_, status) = s
            .call(
                Some(&f.admin),
                Method::GET,
                &format!("/projects/{}/model/status", f.project),
                None,
            )
            .await;
        last = status;
        if last["job"]["status"] == "done" {
            break;
        }
    }
    assert_eq!(last["job"]["status"], "done", "{last}");
    assert_eq!(last["job"]["metrics"].as_array().unwrap().len(), 2);

    let (status, w) = s
        .call(
            Some(&f.admin),
            Method::POST,
            &format!("/projects/{}/model/weights", f.project),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{w}");
    let resp = s
        .http
        .get(format!(
            "{}/api/projects/{}/model/weights",
            s.url(),
            f.project
        ))
        .bearer_auth(&f.admin)
        .send()
        .await
        .unwrap();
    assert_eq!(
        resp.headers()["x-content-sha256"],
        w["digest"].as_str().unwrap()
    );
    let bytes = resp.bytes().await.unwrap();
    assert_eq!(
        bytes.as_ref(),
        auralabel::gateway::mock::mock_weights().as_slice()
    );

    let (status, body) = s
        .call(
            Some(&f.a1),
            Method::GET,
            &format!("/projects/{}/model/status", f.project),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN, "{body}");
}

#[tokio::test]
async fn bad_yaml_names_the_key() {
    let world = GatewayWorld::build().await;
    let resp = world
        .server
        .http
        .post(format!(
            "{}/api/projects/{}/model",
            world.server.url(),
            world.fixture.project
        ))
        .bearer_auth(&world.fixture.admin)
        .body("image: \"a/b:1\"\noutput_schema:\n  - { \"type\": \"segment\", \"label\": \"x\" }\n")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(body["error"], "config_schema_error");
    assert_eq!(body["path"], "endpoint");
}
