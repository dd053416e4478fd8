//! Whole-project archives: one JSON document per entity class plus the
//! audio blobs, importable under fresh ids.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::store::AUDIO_DIR;
use super::{ModelAttachment, Store, StoreError};
use crate::domain::{
    validate_region, AnnotationRegion, AssetId, AudioAsset, JudgmentId, PreferenceJudgment,
    Project, ProjectId, RegionId, Task, TaskId, User, UserId,
};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> SnapshotError {
    SnapshotError::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotArchive {
    pub project: Project,
    pub users: Vec<User>,
    pub assets: Vec<AudioAsset>,
    pub tasks: Vec<Task>,
    pub regions: Vec<AnnotationRegion>,
    pub judgments: Vec<PreferenceJudgment>,
    pub model: Option<ModelAttachment>,
    /// Audio bytes keyed by digest.
    #[serde(skip)]
    pub audio: BTreeMap<String, Vec<u8>>,
}

const DOCUMENTS: [&str; 7] = [
    "project.json",
    "users.json",
    "assets.json",
    "tasks.json",
    "regions.json",
    "judgments.json",
    "model.json",
];

fn parse_document<T: DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<T, SnapshotError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        violation(format!("{name}:{path}"), e.into_inner().to_string())
    })
}

impl SnapshotArchive {
    /// The per-class documents, in a fixed order.
    pub fn documents(&self) -> Vec<(&'static str, Vec<u8>)> {
        fn doc<T: Serialize>(v: &T) -> Vec<u8> {
            let mut out = serde_json::to_vec_pretty(v).expect("snapshot serializes");
            out.push(b'\n');
            out
        }
        vec![
            (DOCUMENTS[0], doc(&self.project)),
            (DOCUMENTS[1], doc(&self.users)),
            (DOCUMENTS[2], doc(&self.assets)),
            (DOCUMENTS[3], doc(&self.tasks)),
            (DOCUMENTS[4], doc(&self.regions)),
            (DOCUMENTS[5], doc(&self.judgments)),
            (DOCUMENTS[6], doc(&self.model)),
        ]
    }

    pub fn from_documents(
        docs: &BTreeMap<String, Vec<u8>>,
        audio: BTreeMap<String, Vec<u8>>,
    ) -> Result<Self, SnapshotError> {
        let get = |name: &str| {
            docs.get(name)
                .ok_or_else(|| violation(name, "document missing"))
        };
        Ok(SnapshotArchive {
            project: parse_document(DOCUMENTS[0], get(DOCUMENTS[0])?)?,
            users: parse_document(DOCUMENTS[1], get(DOCUMENTS[1])?)?,
            assets: parse_document(DOCUMENTS[2], get(DOCUMENTS[2])?)?,
            tasks: parse_document(DOCUMENTS[3], get(DOCUMENTS[3])?)?,
            regions: parse_document(DOCUMENTS[4], get(DOCUMENTS[4])?)?,
            judgments: parse_document(DOCUMENTS[5], get(DOCUMENTS[5])?)?,
            model: parse_document(DOCUMENTS[6], get(DOCUMENTS[6])?)?,
            audio,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir.join(AUDIO_DIR))?;
        for (name, bytes) in self.documents() {
            fs::write(dir.join(name), bytes)?;
        }
        for (digest, bytes) in &self.audio {
            fs::write(dir.join(AUDIO_DIR).join(digest), bytes)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, SnapshotError> {
        let mut docs = BTreeMap::new();
        for name in DOCUMENTS {
            let path = dir.join(name);
            if path.exists() {
                docs.insert(name.to_string(), fs::read(path).map_err(StoreError::from)?);
            }
        }
        let mut audio = BTreeMap::new();
        let audio_dir = dir.join(AUDIO_DIR);
        if audio_dir.is_dir() {
            for entry in fs::read_dir(audio_dir).map_err(StoreError::from)? {
                let entry = entry.map_err(StoreError::from)?;
                let name = entry.file_name().to_string_lossy().into_owned();
                audio.insert(name, fs::read(entry.path()).map_err(StoreError::from)?);
            }
        }
        Self::from_documents(&docs, audio)
    }

    /// Cross-document checks, reporting the first offending path.
    pub fn validate(&self) -> Result<(), SnapshotError> {
        if let Some(problem) = self.project.check().into_iter().next() {
            return Err(violation("project", problem));
        }
        let user_ids: BTreeSet<&UserId> = self.users.iter().map(|u| &u.id).collect();
        for (i, user) in self.users.iter().enumerate() {
            if user.username.trim().is_empty() {
                return Err(violation(format!("users[{i}].username"), "empty username"));
            }
        }
        for member in self.project.members.keys() {
            if !user_ids.contains(member) {
                return Err(violation(
                    "project.members",
                    format!("unknown user {member}"),
                ));
            }
        }
        let assets: BTreeMap<&AssetId, &AudioAsset> =
            self.assets.iter().map(|a| (&a.id, a)).collect();
        for (i, asset) in self.assets.iter().enumerate() {
            let Some(bytes) = self.audio.get(&asset.digest) else {
                return Err(violation(format!("assets[{i}]"), "audio blob missing"));
            };
            if hex::encode(Sha256::digest(bytes)) != asset.digest {
                return Err(violation(format!("assets[{i}].digest"), "digest mismatch"));
            }
        }
        let mut tasks: BTreeMap<&TaskId, &Task> = BTreeMap::new();
        for (i, task) in self.tasks.iter().enumerate() {
            if task.project_id != self.project.id {
                return Err(violation(
                    format!("tasks[{i}].project_id"),
                    "foreign project",
                ));
            }
            if !assets.contains_key(&task.audio_asset_id) {
                return Err(violation(
                    format!("tasks[{i}].audio_asset_id"),
                    "unknown asset",
                ));
            }
            if let Some(u) = task.assignees.keys().find(|u| !user_ids.contains(u)) {
                return Err(violation(
                    format!("tasks[{i}].assignees"),
                    format!("unknown user {u}"),
                ));
            }
            tasks.insert(&task.id, task);
        }
        for (i, region) in self.regions.iter().enumerate() {
            let Some(task) = tasks.get(&region.task_id) else {
                return Err(violation(format!("regions[{i}].task_id"), "unknown task"));
            };
            if !user_ids.contains(&region.annotator_id) {
                return Err(violation(
                    format!("regions[{i}].annotator_id"),
                    "unknown user",
                ));
            }
            let asset = assets[&task.audio_asset_id];
            let problems = validate_region(region, &self.project, asset);
            if let Some(first) = problems.first() {
                return Err(violation(format!("regions[{i}]"), first.to_string()));
            }
        }
        for (i, judgment) in self.judgments.iter().enumerate() {
            if let Some(problem) = judgment.check(&self.project).into_iter().next() {
                return Err(violation(format!("judgments[{i}]"), problem));
            }
        }
        Ok(())
    }
}

/// Collects every entity belonging to `project_id`.
pub fn export_snapshot(store: &Store, project_id: &str) -> Result<SnapshotArchive, StoreError> {
    let project = store.get::<Project>(project_id)?.value;
    let tasks = store.list::<Task>(|t| t.project_id == project.id);
    let mut asset_ids: BTreeSet<AssetId> = tasks.iter().map(|t| t.audio_asset_id.clone()).collect();
    let judgments = store.list::<PreferenceJudgment>(|j| j.project_id == project.id);
    for j in &judgments {
        for item in [&j.item_a, &j.item_b] {
            if store.get::<AudioAsset>(item).is_ok() {
                asset_ids.insert(AssetId(item.clone()));
            }
        }
    }
    let assets: Vec<AudioAsset> = asset_ids
        .iter()
        .map(|id| store.get::<AudioAsset>(id.as_str()).map(|v| v.value))
        .collect::<Result<_, _>>()?;
    let mut audio = BTreeMap::new();
    for asset in &assets {
        audio.insert(asset.digest.clone(), store.read_blob(&asset.digest)?);
    }
    let task_ids: BTreeSet<&TaskId> = tasks.iter().map(|t| &t.id).collect();
    let regions = store.list::<AnnotationRegion>(|r| task_ids.contains(&r.task_id));
    let mut user_ids: BTreeSet<UserId> = project.members.keys().cloned().collect();
    user_ids.extend(regions.iter().map(|r| r.annotator_id.clone()));
    user_ids.extend(
        regions
            .iter()
            .filter_map(|r| r.review.as_ref().map(|v| v.reviewer_id.clone())),
    );
    user_ids.extend(judgments.iter().map(|j| j.rater_id.clone()));
    let users = user_ids
        .iter()
        .filter_map(|id| store.get::<User>(id.as_str()).ok())
        .map(|v| User {
            credential_hash: Vec::new(),
            ..v.value
        })
        .collect();
    let model = project
        .model_config_id
        .as_ref()
        .and_then(|id| store.get::<ModelAttachment>(id).ok())
        .map(|v| v.value);
    Ok(SnapshotArchive {
        project,
        users,
        assets,
        tasks,
        regions,
        judgments,
        model,
        audio,
    })
}

#[derive(Debug, Clone)]
pub struct ImportOutcome {
    pub project_id: ProjectId,
    /// Archive id to id in the target store, for every imported entity.
    pub id_map: BTreeMap<String, String>,
}

/// Recreates an archived project under fresh ids.
///
/// Users are matched by username; unknown users are created without
/// credentials. Audio already present (same digest) is reused.
pub fn import_snapshot(
    store: &Store,
    archive: &SnapshotArchive,
) -> Result<ImportOutcome, SnapshotError> {
    archive.validate()?;
    for bytes in archive.audio.values() {
        store.write_blob(bytes)?;
    }
    let outcome = store.transaction(|tx| {
        let mut ids: BTreeMap<String, String> = BTreeMap::new();
        for user in &archive.users {
            let existing = tx
                .values::<User>()
                .find(|u| u.username == user.username)
                .map(|u| u.id.clone());
            let id = match existing {
                Some(id) => id,
                None => {
                    let id = UserId(tx.next_id("user"));
                    tx.insert(User {
                        id: id.clone(),
                        username: user.username.clone(),
                        credential_hash: Vec::new(),
                    })?;
                    id
                }
            };
            ids.insert(user.id.to_string(), id.to_string());
        }
        for asset in &archive.assets {
            let existing = tx
                .values::<AudioAsset>()
                .find(|a| a.digest == asset.digest)
                .map(|a| a.id.clone());
            let id = match existing {
                Some(id) => id,
                None => {
                    let id = AssetId(tx.next_id("asset"));
                    tx.insert(AudioAsset {
                        id: id.clone(),
                        ..asset.clone()
                    })?;
                    id
                }
            };
            ids.insert(asset.id.to_string(), id.to_string());
        }
        let user = |ids: &BTreeMap<String, String>, u: &UserId| UserId(ids[u.as_str()].clone());

        let project_id = ProjectId(tx.next_id("project"));
        ids.insert(archive.project.id.to_string(), project_id.to_string());
        let model_id = archive.model.as_ref().map(|_| tx.next_id("model"));
        let mut project = archive.project.clone();
        project.id = project_id.clone();
        project.members = archive
            .project
            .members
            .iter()
            .map(|(u, r)| (user(&ids, u), *r))
            .collect();
        project.model_config_id = model_id.clone();
        tx.insert(project)?;
        if let (Some(model), Some(model_id)) = (&archive.model, model_id) {
            ids.insert(model.id.clone(), model_id.clone());
            tx.insert(ModelAttachment {
                id: model_id,
                project_id: project_id.clone(),
                ..model.clone()
            })?;
        }

        for task in &archive.tasks {
            let id = TaskId(tx.next_id("task"));
            ids.insert(task.id.to_string(), id.to_string());
            tx.insert(Task {
                id,
                project_id: project_id.clone(),
                audio_asset_id: AssetId(ids[task.audio_asset_id.as_str()].clone()),
                assignees: task
                    .assignees
                    .iter()
                    .map(|(u, s)| (user(&ids, u), *s))
                    .collect(),
            })?;
        }
        for region in &archive.regions {
            let id = RegionId(tx.next_id("region"));
            ids.insert(region.id.to_string(), id.to_string());
            let mut copy = region.clone();
            copy.id = id;
            copy.task_id = TaskId(ids[region.task_id.as_str()].clone());
            copy.annotator_id = user(&ids, &region.annotator_id);
            if let Some(review) = copy.review.as_mut() {
                if let Some(mapped) = ids.get(review.reviewer_id.as_str()) {
                    review.reviewer_id = UserId(mapped.clone());
                }
            }
            tx.insert(copy)?;
        }
        for judgment in &archive.judgments {
            let id = JudgmentId(tx.next_id("judgment"));
            ids.insert(judgment.id.to_string(), id.to_string());
            let item = |s: &String| ids.get(s).cloned().unwrap_or_else(|| s.clone());
            tx.insert(PreferenceJudgment {
                id,
                project_id: project_id.clone(),
                item_a: item(&judgment.item_a),
                item_b: item(&judgment.item_b),
                rater_id: user(&ids, &judgment.rater_id),
                ..judgment.clone()
            })?;
        }
        Ok::<_, StoreError>(ImportOutcome {
            project_id,
            id_map: ids,
        })
    })?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Provenance, RegionStatus, Role, TaskStatus};
    use crate::storage::wav;

    fn seed(store: &Store) -> String {
        let asset = store
            .ingest_audio(&wav::silence_wav(8_000, 5.0), "a.wav")
            .unwrap()
            .asset;
        store
            .transaction(|tx| {
                tx.insert(User {
                    id: "u1".into(),
                    username: "mia".into(),
                    credential_hash: vec![1],
                })?;
                let mut members = BTreeMap::new();
                members.insert(UserId::from("u1"), Role::Manager);
                tx.insert(Project {
                    id: "p1".into(),
                    name: "demo".into(),
                    ontology: vec!["speech".into()],
                    grounding_required: false,
                    members,
                    model_config_id: None,
                    assignment_strategy: None,
                })?;
                tx.insert(Task {
                    id: "t1".into(),
                    project_id: "p1".into(),
                    audio_asset_id: asset.id.clone(),
                    assignees: [(UserId::from("u1"), TaskStatus::InProgress)].into(),
                })?;
                tx.insert(AnnotationRegion {
                    id: "r1".into(),
                    task_id: "t1".into(),
                    annotator_id: "u1".into(),
                    start_s: 1.0,
                    end_s: 2.0,
                    labels: vec!["speech".into()],
                    caption: None,
                    provenance: Provenance::Human,
                    status: RegionStatus::Draft,
                    review: None,
                    confidence: None,
                })
            })
            .unwrap();
        "p1".to_string()
    }

    #[test]
    fn empty_project_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store
            .transaction(|tx| {
                tx.insert(User {
                    id: "u1".into(),
                    username: "mia".into(),
                    credential_hash: vec![],
                })?;
                tx.insert(Project {
                    id: "p1".into(),
                    name: "empty".into(),
                    ontology: vec![],
                    grounding_required: true,
                    members: [(UserId::from("u1"), Role::Manager)].into(),
                    model_config_id: None,
                    assignment_strategy: None,
                })
            })
            .unwrap();
        let archive = export_snapshot(&store, "p1").unwrap();
        assert!(archive.tasks.is_empty());
        let out = import_snapshot(&store, &archive).unwrap();
        let copy = store.get::<Project>(out.project_id.as_str()).unwrap().value;
        assert_eq!(copy.name, "empty");
        assert!(copy.grounding_required);
        assert!(store
            .list_tasks(&crate::storage::TaskFilter {
                project: Some(out.project_id.to_string()),
                ..Default::default()
            })
            .is_empty());
    }

    #[test]
    fn directory_round_trip_and_credentials_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let p = seed(&store);
        let archive = export_snapshot(&store, &p).unwrap();
        assert!(archive.users.iter().all(|u| u.credential_hash.is_empty()));
        let out = tempfile::tempdir().unwrap();
        archive.write_dir(out.path()).unwrap();
        let users_doc = fs::read_to_string(out.path().join("users.json")).unwrap();
        assert!(!users_doc.contains("credential"));
        let back = SnapshotArchive::read_dir(out.path()).unwrap();
        assert_eq!(back, archive);
        assert_eq!(back.audio, archive.audio);
    }

    #[test]
    fn inverted_region_is_schema_violation() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let p = seed(&store);
        let mut archive = export_snapshot(&store, &p).unwrap();
        archive.regions[0].end_s = 0.5;
        let before = store.digest();
        match import_snapshot(&store, &archive) {
            Err(SnapshotError::SchemaViolation { path, message }) => {
                assert_eq!(path, "regions[0]");
                assert_eq!(message, "start_s < end_s");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.digest(), before);
    }

    #[test]
    fn type_error_reports_document_path() {
        let mut docs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for name in DOCUMENTS {
            docs.insert(name.into(), b"[]".to_vec());
        }
        docs.insert("project.json".into(), b"{}".to_vec());
        docs.insert("model.json".into(), b"null".to_vec());
        docs.insert(
            "regions.json".into(),
            br#"[{"id":"r","task_id":"t","annotator_id":"u","start_s":"zero"}]"#.to_vec(),
        );
        let err = SnapshotArchive::from_documents(&docs, BTreeMap::new()).unwrap_err();
        assert!(
            matches!(err, SnapshotError::SchemaViolation { ref path, .. } if path.starts_with("project.json"))
        );
        docs.insert(
            "project.json".into(),
            br#"{"id":"p","name":"n","ontology":[],"members":{}}"#.to_vec(),
        );
        let err = SnapshotArchive::from_documents(&docs, BTreeMap::new()).unwrap_err();
        match err {
            SnapshotError::SchemaViolation { path, .. } => {
                assert_eq!(path, "regions.json:[0].start_s")
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
