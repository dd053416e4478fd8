mod common;

use auralabel::api::{EndpointClass, PermissionMatrix};
use auralabel::domain::Role;
use common::rbac::{expected_denial, Actor, RbacWorld, DECLARED};
use common::{seed_project, wav, TestServer};
use reqwest::{Method, StatusCode};
use serde_json::json;

#[test]
fn matrix_matches_declared_table() {
    let matrix = PermissionMatrix::default();
    assert_eq!(DECLARED.len(), EndpointClass::ALL.len());
    for class in EndpointClass::ALL {
        let name = serde_json::to_value(class).unwrap();
        let row = DECLARED
            .iter()
            .find(|(n, _)| *n == name)
            .expect("class declared");
        for (i, role) in [Role::Manager, Role::Annotator, Role::Reviewer]
            .into_iter()
            .enumerate()
        {
            assert_eq!(matrix.allows(role, class), row.1[i], "{role} x {name}");
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn every_pair_over_http() {
    let matrix = PermissionMatrix::default();
    for class in EndpointClass::ALL {
        let world = RbacWorld::build().await;
        // denied pairs first so allowed mutations cannot mask them
        let mut actors = Actor::ALL.to_vec();
        actors.sort_by_key(|a| expected_denial(&matrix, class, *a).is_none());
        for actor in actors {
            let (status, body) = world.probe(class, actor).await;
            match expected_denial(&matrix, class, actor) {
                Some(expected) => {
                    assert_eq!(
                        status,
                        StatusCode::FORBIDDEN,
                        "{class:?} as {actor:?}: {body}"
                    );
                    assert_eq!(body, expected, "{class:?} as {actor:?}");
                }
                None => assert_ne!(
                    status,
                    StatusCode::FORBIDDEN,
                    "{class:?} as {actor:?}: {body}"
                ),
            }
        }
    }
}

#[tokio::test]
async fn annotator_cannot_read_another_queue() {
    let server = TestServer::start().await;
    let f = seed_project(&server, &["dog"], false).await;
    server
        .upload(
            &f.admin,
            &f.project,
            &[("one.wav", wav(1, 1.0)), ("two.wav", wav(2, 1.0))],
        )
        .await;
    let (_, plan) = server
        .call(
            Some(&f.admin),
            Method::POST,
            &format!("/projects/{}/assign", f.project),
            Some(json!({"strategy": "disjoint"})),
        )
        .await;
    let theirs = plan["assignments"][&f.a2_id][0]
        .as_str()
        .unwrap()
        .to_string();
    let (status, body) = server
        .call(
            Some(&f.a1),
            Method::GET,
            &format!("/tasks/{theirs}/annotations"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(
        body,
        json!({"error": "forbidden", "reason": "not_assignee"})
    );

    // a region inside another annotator's queue is equally hidden
    server
        .call(
            Some(&f.a2),
            Method::PUT,
            &format!("/tasks/{theirs}/annotations"),
            Some(json!({"regions": [{"start_s": 0.0, "end_s": 0.5, "labels": ["dog"]}]})),
        )
        .await;
    let (_, regions) = server
        .call(
            Some(&f.admin),
            Method::GET,
            &format!("/tasks/{theirs}/annotations"),
            None,
        )
        .await;
    let region = regions[0]["id"].as_str().unwrap();
    let (status, _) = server
        .call(
            Some(&f.a1),
            Method::GET,
            &format!("/annotations/{region}"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    // the reviewer does not see drafts
    let (status, body) = server
        .call(
            Some(&f.r1),
            Method::GET,
            &format!("/annotations/{region}"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["reason"], "status_hidden");
}

#[tokio::test]
async fn manager_can_export() {
    let server = TestServer::start().await;
    let f = seed_project(&server, &["dog"], false).await;
    let (status, headers, body) = server
        .raw(
            &f.admin,
            &format!("/projects/{}/export?kind=captions", f.project),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["x-export-empty"], "true");
    assert_eq!(body, "");
}
