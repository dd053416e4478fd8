//! The `auralabel` operator command line. Every command except `serve` and
//! `backend check` is a call against a running server.

mod client;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use futures::stream::{self, StreamExt};

pub use client::{ApiClient, ClientError, RawDocument};

use crate::api::types::{
    CreateProjectRequest, ExportKind, ExportView, IngestResult, IngestStatus, ReportFormat,
};
use crate::api::{serve, shutdown_signal, ServeOptions, ServiceConfig};
use crate::domain::{AssignmentStrategy, Role};
use crate::export::ExportFormat;
use crate::gateway::{conformance_probe, parse_config};

/// Uploads in flight during `ingest`.
pub const MAX_PARALLEL_UPLOADS: usize = 4;

#[derive(Debug, Parser)]
#[command(
    name = "auralabel",
    version,
    about = "Audio annotation server and admin client"
)]
pub struct Cli {
    /// Base URL of the server.
    #[arg(
        long,
        env = "AURALABEL_SERVER",
        default_value = "http://127.0.0.1:8080",
        global = true
    )]
    pub server: String,
    /// Session token from `login`.
    #[arg(long, env = "AURALABEL_TOKEN", global = true, hide_env_values = true)]
    pub token: Option<String>,
    /// `machine` prints documents verbatim and one JSON record per line.
    #[arg(long, value_enum, default_value_t = Output::Human, global = true)]
    pub output: Output,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Human,
    Machine,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the API server.
    Serve(ServeArgs),
    /// Exchange a username and secret for a session token.
    Login {
        #[arg(long)]
        username: String,
        #[arg(long, env = "AURALABEL_SECRET", hide_env_values = true)]
        secret: String,
    },
    #[command(subcommand)]
    Project(ProjectCommand),
    /// Upload audio files (or every file in the given directories).
    Ingest {
        #[arg(long)]
        project: String,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    Assign {
        #[arg(long)]
        project: String,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
    },
    Export {
        #[arg(long)]
        project: String,
        #[arg(long, value_enum, default_value_t = KindArg::Regions)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = ExportFormatArg::Jsonl)]
        format: ExportFormatArg,
        #[arg(long, value_enum, default_value_t = ViewArg::Raw)]
        view: ViewArg,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Report {
        #[arg(value_enum)]
        kind: ReportKind,
        #[arg(long)]
        project: String,
        #[arg(long, value_enum, default_value_t = ReportFormatArg::Json)]
        format: ReportFormatArg,
    },
    #[command(subcommand)]
    Backend(BackendCommand),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "AURALABEL_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    #[arg(long, env = "AURALABEL_DATA_DIR")]
    pub data_dir: PathBuf,
    /// Session lifetime in seconds.
    #[arg(long, env = "AURALABEL_TOKEN_TTL", default_value_t = 86_400)]
    pub token_ttl: u64,
    /// Account to create on startup if missing.
    #[arg(long, env = "AURALABEL_BOOTSTRAP_USER", requires = "bootstrap_secret")]
    pub bootstrap_user: Option<String>,
    #[arg(long, env = "AURALABEL_BOOTSTRAP_SECRET", hide_env_values = true)]
    pub bootstrap_secret: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ProjectCommand {
    Create {
        #[arg(long)]
        name: String,
        /// Comma-separated label list.
        #[arg(long, value_delimiter = ',')]
        ontology: Vec<String>,
        /// Reject captions that span the whole file.
        #[arg(long)]
        grounding_required: bool,
    },
    AddMember {
        #[arg(long)]
        project: String,
        #[arg(long)]
        username: String,
        #[arg(long, value_enum)]
        role: RoleArg,
        /// Initial secret when the account is new.
        #[arg(long, env = "AURALABEL_MEMBER_SECRET", hide_env_values = true)]
        secret: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BackendCommand {
    /// Probe the endpoint named in a backend YAML file.
    Check {
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        timeout_secs: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Shared,
    Disjoint,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    Manager,
    Annotator,
    Reviewer,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Regions,
    Captions,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportFormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ViewArg {
    Raw,
    Consensus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Agreement,
    Ranking,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormatArg {
    Json,
    Csv,
}

/// Outcome of one command: process exit code.
pub type Exit = i32;

fn fail(err: &mut dyn Write, message: impl std::fmt::Display) -> Exit {
    let _ = writeln!(err, "error: {message}");
    1
}

/// Files named on the command line, directories expanded one level, in
/// name order.
pub fn collect_files(paths: &[PathBuf]) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Runs one parsed command. Output goes to `out`, diagnostics to `err`.
pub async fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Exit {
    let machine = cli.output == Output::Machine;
    let client = ApiClient::new(cli.server.clone(), cli.token.clone());
    match cli.command {
        Command::Serve(args) => run_serve(args, err).await,
        Command::Login { username, secret } => match client.login(&username, &secret).await {
            Ok(s) => {
                if machine {
                    let _ = writeln!(out, "{}", serde_json::to_string(&s).expect("serializable"));
                } else {
                    let _ = writeln!(out, "{}", s.token);
                }
                0
            }
            Err(e) => fail(err, e),
        },
        Command::Project(ProjectCommand::Create {
            name,
            ontology,
            grounding_required,
        }) => {
            let req = CreateProjectRequest {
                name,
                ontology,
                grounding_required,
            };
            match client.create_project(&req).await {
                Ok(p) if machine => {
                    let _ = writeln!(out, "{}", serde_json::to_string(&p).expect("serializable"));
                    0
                }
                Ok(p) => {
                    let _ = writeln!(out, "created project {} ({})", p.id, p.name);
                    0
                }
                Err(e) => fail(err, e),
            }
        }
        Command::Project(ProjectCommand::AddMember {
            project,
            username,
            role,
            secret,
        }) => {
            let role = match role {
                RoleArg::Manager => Role::Manager,
                RoleArg::Annotator => Role::Annotator,
                RoleArg::Reviewer => Role::Reviewer,
            };
            match client.add_member(&project, &username, role, secret).await {
                Ok(m) if machine => {
                    let _ = writeln!(out, "{}", serde_json::to_string(&m).expect("serializable"));
                    0
                }
                Ok(m) => {
                    let new = if m.created { " (new account)" } else { "" };
                    let _ = writeln!(out, "{} ({}) is {}{new}", m.username, m.user_id, m.role);
                    0
                }
                Err(e) => fail(err, e),
            }
        }
        Command::Ingest { project, paths } => {
            run_ingest(&client, &project, &paths, machine, out, err).await
        }
        Command::Assign { project, strategy } => {
            let strategy = match strategy {
                StrategyArg::Shared => AssignmentStrategy::Shared,
                StrategyArg::Disjoint => AssignmentStrategy::Disjoint,
            };
            match client.assign(&project, strategy).await {
                Ok(a) if machine => {
                    let _ = writeln!(out, "{}", serde_json::to_string(&a).expect("serializable"));
                    0
                }
                Ok(a) => {
                    for (user, tasks) in &a.assignments {
                        let ids: Vec<&str> = tasks.iter().map(|t| t.as_str()).collect();
                        let _ = writeln!(out, "{user}: {}", ids.join(" "));
                    }
                    0
                }
                Err(e) => fail(err, e),
            }
        }
        Command::Export {
            project,
            kind,
            format,
            view,
            out: target,
        } => {
            let kind = match kind {
                KindArg::Regions => ExportKind::Regions,
                KindArg::Captions => ExportKind::Captions,
            };
            let format = match format {
                ExportFormatArg::Jsonl => ExportFormat::Jsonl,
                ExportFormatArg::Csv => ExportFormat::Csv,
            };
            let view = match view {
                ViewArg::Raw => ExportView::Raw,
                ViewArg::Consensus => ExportView::Consensus,
            };
            match client.export(&project, kind, format, view).await {
                Ok(doc) => {
                    if doc.records == 0 {
                        let _ = writeln!(err, "note: export is empty");
                    }
                    match target {
                        Some(path) => match std::fs::write(&path, doc.body.as_bytes()) {
                            Ok(()) => {
                                if !machine {
                                    let _ = writeln!(
                                        out,
                                        "wrote {} records to {}",
                                        doc.records,
                                        path.display()
                                    );
                                }
                                0
                            }
                            Err(e) => fail(err, format!("{}: {e}", path.display())),
                        },
                        None => {
                            let _ = out.write_all(doc.body.as_bytes());
                            0
                        }
                    }
                }
                Err(e) => fail(err, e),
            }
        }
        Command::Report {
            kind,
            project,
            format,
        } => {
            let format = match format {
                ReportFormatArg::Json => ReportFormat::Json,
                ReportFormatArg::Csv => ReportFormat::Csv,
            };
            let fetched = match kind {
                ReportKind::Agreement => client.agreement(&project, format).await,
                ReportKind::Ranking => client.ranking(&project, format).await,
            };
            match fetched {
                Ok(doc) if machine || matches!(format, ReportFormat::Csv) => {
                    let _ = out.write_all(doc.body.as_bytes());
                    0
                }
                Ok(doc) => {
                    let _ = out.write_all(render_report(kind, &doc.body).as_bytes());
                    0
                }
                Err(e) => fail(err, e),
            }
        }
        Command::Backend(BackendCommand::Check {
            config,
            timeout_secs,
        }) => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(err, format!("{}: {e}", config.display())),
            };
            let parsed = match parse_config(&text) {
                Ok(c) => c,
                Err(e) => return fail(err, e),
            };
            let report =
                conformance_probe(&parsed.endpoint, Duration::from_secs(timeout_secs)).await;
            if machine {
                for c in &report.checks {
                    let _ = writeln!(out, "{}", serde_json::to_string(c).expect("serializable"));
                }
            } else {
                let _ = out.write_all(report.render().as_bytes());
            }
            if report.passed() {
                0
            } else {
                1
            }
        }
    }
}

async fn run_serve(args: ServeArgs, err: &mut dyn Write) -> Exit {
    let options = ServeOptions {
        listen: args.listen,
        data_dir: args.data_dir,
        config: ServiceConfig {
            token_ttl: Duration::from_secs(args.token_ttl),
            ..ServiceConfig::default()
        },
        bootstrap: args.bootstrap_user.zip(args.bootstrap_secret),
    };
    match serve(options, None, shutdown_signal()).await {
        Ok(()) => 0,
        Err(e) => fail(err, e),
    }
}

async fn run_ingest(
    client: &ApiClient,
    project: &str,
    paths: &[PathBuf],
    machine: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Exit {
    let files = match collect_files(paths) {
        Ok(f) => f,
        Err(e) => return fail(err, e),
    };
    let uploads = files.into_iter().map(|path| async move {
        let name = file_name(&path);
        let outcome = match tokio::fs::read(&path).await {
            Ok(bytes) => client
                .upload(project, &name, bytes)
                .await
                .map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        };
        match outcome {
            Ok(resp) => resp.results,
            Err(message) => vec![IngestResult {
                filename: name,
                status: IngestStatus::Error,
                task_id: None,
                error: Some(message),
            }],
        }
    });
    let results: Vec<IngestResult> = stream::iter(uploads)
        .buffered(MAX_PARALLEL_UPLOADS)
        .collect::<Vec<_>>()
        .await
        .into_iter()
        .flatten()
        .collect();
    let (mut created, mut skipped, mut failed) = (0, 0, 0);
    for r in &results {
        match r.status {
            IngestStatus::Created => created += 1,
            IngestStatus::Skipped => skipped += 1,
            IngestStatus::Error => failed += 1,
        }
        if machine {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("serializable"));
        } else {
            let detail = match (&r.task_id, &r.error) {
                (_, Some(e)) => e.clone(),
                (Some(t), None) => t.to_string(),
                (None, None) => String::new(),
            };
            let status = match r.status {
                IngestStatus::Created => "created",
                IngestStatus::Skipped => "skipped",
                IngestStatus::Error => "error",
            };
            let _ = writeln!(out, "{status:<8} {} {detail}", r.filename);
        }
    }
    if !machine {
        let _ = writeln!(out, "{created} created, {skipped} skipped, {failed} failed");
    }
    if failed > 0 {
        1
    } else {
        0
    }
}

/// Human rendering of a JSON report body.
pub fn render_report(kind: ReportKind, body: &str) -> String {
    let Ok(doc) = serde_json::from_str::<serde_json::Value>(body) else {
        return body.to_string();
    };
    if doc["empty"].as_bool() == Some(true) {
        return format!(
            "no agreement data: {}\n",
            doc["note"].as_str().unwrap_or("")
        );
    }
    match kind {
        ReportKind::Agreement => {
            let num = |k: &str| doc[k].as_f64().unwrap_or(f64::NAN);
            let mut s = format!("kappa = {:.6}\n", num("kappa"));
            s.push_str(&format!(
                "items = {}, raters = {}, categories = {}\n",
                doc["N"], doc["n"], doc["k"]
            ));
            s.push_str(&format!(
                "P_bar = {:.6}, Pe_bar = {:.6}\n",
                num("P_bar"),
                num("Pe_bar")
            ));
            if doc["degenerate"].as_bool() == Some(true) {
                s.push_str("note: all ratings fall in one category\n");
            }
            s
        }
        ReportKind::Ranking => {
            let mut s = format!(
                "{:>4}  {:<24} {:>10} {:>10}\n",
                "rank", "item", "theta", "stddev"
            );
            for row in doc["ranking"].as_array().into_iter().flatten() {
                s.push_str(&format!(
                    "{:>4}  {:<24} {:>10.6} {:>10.6}\n",
                    row["rank"],
                    row["item_id"].as_str().unwrap_or(""),
                    row["theta"].as_f64().unwrap_or(f64::NAN),
                    row["stddev"].as_f64().unwrap_or(f64::NAN),
                ));
            }
            s
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    if matches!(cli.command, Command::Serve(_)) {
        let _ = tracing_subscriber::fmt()
            .with_env_filter(
                tracing_subscriber::EnvFilter::try_from_default_env()
                    .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
            )
            .with_writer(std::io::stderr)
            .try_init();
    }
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return std::process::ExitCode::FAILURE;
        }
    };
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr();
    let code = runtime.block_on(execute(cli, &mut out, &mut err));
    let _ = out.flush();
    std::process::ExitCode::from(code.clamp(0, 255) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_long_flags() {
        let cli = Cli::try_parse_from([
            "auralabel",
            "--token",
            "t",
            "assign",
            "--project",
            "project-00000001",
            "--strategy",
            "disjoint",
        ])
        .unwrap();
        assert!(matches!(
            cli.command,
            Command::Assign {
                strategy: StrategyArg::Disjoint,
                ..
            }
        ));
        assert!(Cli::try_parse_from([
            "auralabel",
            "assign",
            "--project",
            "p",
            "--strategy",
            "random"
        ])
        .is_err());
    }

    #[test]
    fn agreement_rendering() {
        let body = r#"{"N":2,"n":2,"k":2,"kappa":-0.3333333333333333,"P_bar":0.0,"Pe_bar":0.25,"degenerate":false}"#;
        let s = render_report(ReportKind::Agreement, body);
        assert!(s.starts_with("kappa = -0.333333\n"), "{s}");
    }

    #[test]
    fn directories_expand_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["b.wav", "a.wav"] {
            std::fs::write(dir.path().join(n), b"x").unwrap();
        }
        let files = collect_files(&[dir.path().to_path_buf()]).unwrap();
        let names: Vec<String> = files.iter().map(|p| file_name(p)).collect();
        assert_eq!(names, ["a.wav", "b.wav"]);
    }
}
