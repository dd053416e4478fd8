//! Exports a project to a snapshot directory and imports it into a second
//! store under fresh ids.

use std::sync::Arc;

use auralabel::api::types::{AddMemberRequest, CreateProjectRequest};
use auralabel::api::{Service, ServiceConfig};
use auralabel::domain::{AssignmentStrategy, Role};
use auralabel::storage::wav::silence_wav;
use auralabel::storage::{export_snapshot, import_snapshot, SnapshotArchive, Store};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let source = Arc::new(Store::open(tmp.path().join("source"))?);
    let service = Service::new(source.clone(), &ServiceConfig::default());
    let admin = service.ensure_user("admin", "pw")?.id;
    let project = service.create_project(
        &admin,
        &CreateProjectRequest {
            name: "Birds".into(),
            ontology: vec!["wren".into(), "robin".into()],
            grounding_required: false,
        },
    )?;
    service.add_member(
        &admin,
        project.id.as_str(),
        &AddMemberRequest {
            username: "ola".into(),
            role: Role::Annotator,
            secret: Some("pw".into()),
        },
    )?;
    service.ingest(
        &admin,
        project.id.as_str(),
        vec![
            ("dawn.wav".into(), silence_wav(8_000, 1.0)),
            ("dusk.wav".into(), silence_wav(8_000, 2.0)),
        ],
    )?;
    service.assign(&admin, project.id.as_str(), AssignmentStrategy::Shared)?;

    let archive = export_snapshot(&source, project.id.as_str())?;
    let out = tmp.path().join("birds-snapshot");
    archive.write_dir(&out)?;
    for entry in std::fs::read_dir(&out)? {
        let entry = entry?;
        println!(
            "{:>8} bytes  {}",
            entry.metadata()?.len(),
            entry.file_name().to_string_lossy()
        );
    }

    let target = Store::open(tmp.path().join("target"))?;
    let outcome = import_snapshot(&target, &SnapshotArchive::read_dir(&out)?)?;
    println!("imported as {}", outcome.project_id);
    for (old, new) in &outcome.id_map {
        println!("  {old} -> {new}");
    }
    Ok(())
}
