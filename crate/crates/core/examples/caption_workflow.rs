//! Model-assisted captioning end to end, driven through the service layer:
//! stage a candidate caption, correct it, ground it in time, review, export.

use std::sync::Arc;

use auralabel::api::types::{
    AcceptRequest, AddMemberRequest, CreateProjectRequest, ExportKind, ExportView, RegionEdit,
    ReviewRequest,
};
use auralabel::api::{Service, ServiceConfig};
use auralabel::domain::{AssignmentStrategy, Role, Verdict};
use auralabel::export::ExportFormat;
use auralabel::gateway::mock::MockBackend;
use auralabel::gateway::Prediction;
use auralabel::storage::wav::silence_wav;
use auralabel::storage::Store;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Arc::new(Store::open(dir.path().join("data"))?);
    let service = Service::new(store, &ServiceConfig::default());
    let admin = service.ensure_user("admin", "admin-secret")?.id;

    let project = service.create_project(
        &admin,
        &CreateProjectRequest {
            name: "Lo-fi Captions".into(),
            ontology: vec!["music".into()],
            grounding_required: true,
        },
    )?;
    let member = |name: &str, role| AddMemberRequest {
        username: name.into(),
        role,
        secret: Some(format!("{name}-pw")),
    };
    let annotator = service
        .add_member(
            &admin,
            project.id.as_str(),
            &member("noor", Role::Annotator),
        )?
        .user_id;
    let reviewer = service
        .add_member(&admin, project.id.as_str(), &member("rui", Role::Reviewer))?
        .user_id;

    let backend = MockBackend::start_named("music-captioner").await?;
    backend.set_predictions(vec![Prediction::Text {
        label: "Caption".into(),
        text: "A lo-fi hip-hop track with a slow tempo and vinyl crackle.".into(),
        confidence: None,
    }]);
    service.configure_model(
        &admin,
        project.id.as_str(),
        &backend.config_yaml(&[("text", "Caption")]),
    )?;

    service.ingest(
        &admin,
        project.id.as_str(),
        vec![("a.wav".into(), silence_wav(8_000, 30.0))],
    )?;
    service.assign(&admin, project.id.as_str(), AssignmentStrategy::Disjoint)?;
    let task = service
        .list_tasks(&annotator, Some(project.id.as_str()), None)?
        .remove(0)
        .task
        .id;

    let staged = service.predict(&annotator, task.as_str()).await?;
    println!(
        "staged: {}",
        serde_json::to_string(&staged.items[0].prediction)?
    );
    let accepted = service.accept(&annotator, task.as_str(), &AcceptRequest { indices: None })?;
    let draft = &accepted.regions[0];
    println!(
        "draft spans {}..{}",
        draft.region.start_s, draft.region.end_s
    );

    match service.submit(&annotator, task.as_str()) {
        Ok(_) => println!("submitted without grounding?"),
        Err(e) => println!("submit refused: {e}"),
    }

    let edit: RegionEdit = serde_json::from_value(serde_json::json!({
        "id": draft.region.id,
        "version": draft.version,
        "start_s": 4.0,
        "end_s": 9.5,
        "caption": "rain sounds",
    }))?;
    let saved = service.save_annotations(&annotator, task.as_str(), &[edit])?;
    println!("after edit: provenance {:?}", saved[0].region.provenance);
    service.submit(&annotator, task.as_str())?;
    service.review(
        &reviewer,
        saved[0].region.id.as_str(),
        &ReviewRequest {
            verdict: Verdict::Approve,
            feedback: None,
        },
    )?;

    for format in [ExportFormat::Jsonl, ExportFormat::Csv] {
        let doc = service.export(
            &admin,
            project.id.as_str(),
            ExportKind::Captions,
            format,
            ExportView::Raw,
        )?;
        print!("{}", doc.body);
    }
    Ok(())
}
