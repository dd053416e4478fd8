//! Caption correction flow against the in-process mock backend.

use std::collections::BTreeMap;
use std::sync::Arc;

use auralabel::api::{Service, ServiceConfig};
use auralabel::gateway::mock::MockBackend;
use auralabel::gateway::Prediction;
use auralabel::storage::{export_snapshot, import_snapshot, SnapshotArchive, Store};
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

use super::{seed_project, wav, Fixture, TestServer};

pub const CANDIDATE: &str = "A lo-fi hip-hop track with a slow tempo and vinyl crackle.";

pub struct CaptionRun {
    pub server: TestServer,
    pub service: Arc<Service>,
    pub fixture: Fixture,
    pub ungrounded_submit: (StatusCode, Value),
    pub provenance_after_edit: String,
    pub first_export: String,
    pub second_export: String,
    pub csv_export: String,
}

pub async fn run_caption_flow() -> CaptionRun {
    let (server, service) = TestServer::start_embedded(ServiceConfig::default()).await;
    let f = seed_project(&server, &["music"], true).await;
    let backend = MockBackend::start_named("music-captioner").await.unwrap();
    backend.set_predictions(vec![Prediction::Text {
        label: "Caption".into(),
        text: CANDIDATE.into(),
        confidence: None,
    }]);
    let resp = server
        .http
        .post(format!("{}/api/projects/{}/model", server.url(), f.project))
        .bearer_auth(&f.admin)
        .body(backend.config_yaml(&[("text", "Caption")]))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    server
        .upload(&f.admin, &f.project, &[("a.wav", wav(7, 30.0))])
        .await;
    server
        .call(
            Some(&f.admin),
            Method::POST,
            &format!("/projects/{}/assign", f.project),
            Some(json!({"strategy": "disjoint"})),
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
    let owner = tasks[0]["assignees"]
        .as_object()
        .unwrap()
        .keys()
        .next()
        .unwrap()
        .clone();
    let token = if owner == f.a1_id {
        f.a1.clone()
    } else {
        f.a2.clone()
    };

    let (status, staged) = server
        .call(
            Some(&token),
            Method::POST,
            &format!("/tasks/{task}/predict"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{staged}");
    assert_eq!(staged["items"][0]["prediction"]["text"], CANDIDATE);
    let (status, accepted) = server
        .call(
            Some(&token),
            Method::POST,
            &format!("/tasks/{task}/accept"),
            Some(json!({})),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{accepted}");
    let region = accepted["regions"][0].clone();
    assert_eq!(region["start_s"], 0.0);
    assert_eq!(region["end_s"], 30.0);

    // the full-span caption is not grounded in time yet
    let ungrounded_submit = server
        .call(
            Some(&token),
            Method::POST,
            &format!("/tasks/{task}/submit"),
            None,
        )
        .await;

    // the hallucinated phrase is replaced and the caption narrowed to the
    // stretch where the rain is audible
    let corrected = "rain sounds";
    let (status, saved) = server
        .call(
            Some(&token),
            Method::PUT,
            &format!("/tasks/{task}/annotations"),
            Some(json!({"regions": [{
                "id": region["id"],
                "version": region["version"],
                "start_s": 4.0,
                "end_s": 9.5,
                "labels": [],
                "caption": corrected,
            }]})),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{saved}");
    let provenance_after_edit = saved[0]["provenance"].as_str().unwrap().to_string();
    let (status, body) = server
        .call(
            Some(&token),
            Method::POST,
            &format!("/tasks/{task}/submit"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (status, body) = server
        .call(
            Some(&f.r1),
            Method::POST,
            &format!("/annotations/{}/review", region["id"].as_str().unwrap()),
            Some(json!({"verdict": "approve"})),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let path = format!("/projects/{}/export?kind=captions&format=jsonl", f.project);
    let (_, _, first_export) = server.raw(&f.admin, &path).await;
    let (_, _, second_export) = server.raw(&f.admin, &path).await;
    let (_, _, csv_export) = server
        .raw(
            &f.admin,
            &format!("/projects/{}/export?kind=captions&format=csv", f.project),
        )
        .await;
    CaptionRun {
        server,
        service,
        fixture: f,
        ungrounded_submit,
        provenance_after_edit,
        first_export,
        second_export,
        csv_export,
    }
}

fn remap(value: &mut Value, map: &BTreeMap<String, String>) {
    match value {
        Value::String(s) => {
            if let Some(m) = map.get(s.as_str()) {
                *s = m.clone();
            }
        }
        Value::Array(items) => {
            for v in items.iter_mut() {
                remap(v, map);
            }
            items.sort_by_key(|v| v["id"].as_str().map(str::to_string).unwrap_or_default());
        }
        Value::Object(fields) => {
            let old: Vec<(String, Value)> = std::mem::take(fields).into_iter().collect();
            for (k, mut v) in old {
                remap(&mut v, map);
                fields.insert(map.get(&k).cloned().unwrap_or(k), v);
            }
        }
        _ => {}
    }
}

/// Archive documents with the target store's ids mapped back to the source
/// ids, ready for a field-by-field comparison.
pub fn normalized(
    archive: &SnapshotArchive,
    back: &BTreeMap<String, String>,
) -> Vec<(String, Value)> {
    archive
        .documents()
        .into_iter()
        .map(|(name, bytes)| {
            let mut v: Value = serde_json::from_slice(&bytes).unwrap();
            remap(&mut v, back);
            (name.to_string(), v)
        })
        .collect()
}

pub struct SnapshotCheck {
    pub original: Vec<(String, Value)>,
    pub imported: Vec<(String, Value)>,
    pub audio_equal: bool,
}

/// Exports the project, writes and rereads the archive directory, imports
/// it into a fresh store, and exports again.
pub fn snapshot_round_trip(store: &Store, project: &str) -> SnapshotCheck {
    let archive = export_snapshot(store, project).unwrap();
    let dir = tempfile::tempdir().unwrap();
    archive.write_dir(dir.path()).unwrap();
    let reread = SnapshotArchive::read_dir(dir.path()).unwrap();
    let target_dir = tempfile::tempdir().unwrap();
    let target = Store::open(target_dir.path()).unwrap();
    let outcome = import_snapshot(&target, &reread).unwrap();
    let again = export_snapshot(&target, outcome.project_id.as_str()).unwrap();
    let back: BTreeMap<String, String> = outcome
        .id_map
        .iter()
        .map(|(k, v)| (v.clone(), k.clone()))
        .collect();
    let identity = BTreeMap::new();
    SnapshotCheck {
        original: normalized(&archive, &identity),
        imported: normalized(&again, &back),
        audio_equal: archive.audio == again.audio,
    }
}
