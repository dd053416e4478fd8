//! Starts the HTTP service on an ephemeral port and talks to it with the
//! same client the command line uses.

use auralabel::api::types::{CreateProjectRequest, ExportKind, ExportView, ReportFormat};
use auralabel::api::{serve, ServeOptions, ServiceConfig};
use auralabel::cli::ApiClient;
use auralabel::domain::{AssignmentStrategy, Role};
use auralabel::export::ExportFormat;
use auralabel::storage::wav::silence_wav;
use tokio::sync::oneshot;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let (ready, addr) = oneshot::channel();
    let (stop, stopped) = oneshot::channel::<()>();
    let options = ServeOptions {
        listen: "127.0.0.1:0".parse()?,
        data_dir: dir.path().join("data"),
        config: ServiceConfig::default(),
        bootstrap: Some(("admin".into(), "admin-secret".into())),
    };
    let server = tokio::spawn(serve(options, Some(ready), async {
        let _ = stopped.await;
    }));
    let addr = addr.await?;

    let client = ApiClient::new(format!("http://{addr}"), None);
    println!("health: {}", client.health().await?);
    let login = client.login("admin", "admin-secret").await?;
    let client = client.with_token(login.token);

    let project = client
        .create_project(&CreateProjectRequest {
            name: "Street Noise".into(),
            ontology: vec!["car".into()],
            grounding_required: false,
        })
        .await?;
    client
        .add_member(
            project.id.as_str(),
            "mo",
            Role::Annotator,
            Some("pw".into()),
        )
        .await?;
    let up = client
        .upload(project.id.as_str(), "corner.wav", silence_wav(8_000, 1.5))
        .await?;
    println!("upload: {:?}", up.results[0].status);
    let plan = client
        .assign(project.id.as_str(), AssignmentStrategy::Disjoint)
        .await?;
    println!("assignments: {:?}", plan.assignments);

    let doc = client
        .export(
            project.id.as_str(),
            ExportKind::Regions,
            ExportFormat::Csv,
            ExportView::Raw,
        )
        .await?;
    println!("export: {} records, {:?}", doc.records, doc.body);
    match client
        .agreement(project.id.as_str(), ReportFormat::Json)
        .await
    {
        Ok(doc) => print!("agreement: {}", doc.body),
        Err(e) => println!("agreement: {e}"),
    }

    let _ = stop.send(());
    server.await?.map_err(|e| e.to_string())?;
    Ok(())
}
