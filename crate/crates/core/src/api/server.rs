use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{
    DefaultBodyLimit, FromRequest, FromRequestParts, Multipart, Path, Query, Request, State,
};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::net::TcpListener;

use super::error::ApiError;
use super::types::*;
use super::{Service, ServiceConfig, EXPORT_EMPTY_HEADER, EXPORT_RECORDS_HEADER};
use crate::domain::UserId;
use crate::export::ExportFormat;
use crate::gateway::WEIGHTS_DIGEST_HEADER;
use crate::storage::Store;

type AppState = Arc<Service>;

/// Authenticated caller, from `Authorization: Bearer <token>`.
struct Caller(UserId);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(
        parts: &mut Parts,
        state: &AppState,
    ) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::Unauthorized)?;
        Ok(Caller(state.authenticate(token.trim())?.user_id))
    }
}

/// JSON body whose decode errors come back in the API error shape.
struct Body<T>(T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = axum::body::Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::BadRequest(e.body_text()))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        serde_path_to_error::deserialize(de).map(Body).map_err(|e| {
            ApiError::BadRequest(format!("invalid body at {}: {}", e.path(), e.inner()))
        })
    }
}

struct Params<T>(T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Params(v))
            .map_err(|e| ApiError::BadRequest(e.body_text()))
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::BadRequest(format!("worker failed: {e}")))?
}

fn document(doc: Document) -> Response {
    let mut resp = (StatusCode::OK, doc.body).into_response();
    let headers = resp.headers_mut();
    headers.insert(CONTENT_TYPE, HeaderValue::from_static(doc.content_type));
    headers.insert(EXPORT_RECORDS_HEADER, HeaderValue::from(doc.records));
    headers.insert(
        EXPORT_EMPTY_HEADER,
        HeaderValue::from_static(if doc.records == 0 { "true" } else { "false" }),
    );
    resp
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn login(
    State(svc): State<AppState>,
    Body(req): Body<LoginRequest>,
) -> Result<Json<LoginResponse>, ApiError> {
    svc.login(&req).map(Json)
}

async fn create_project(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Body(req): Body<CreateProjectRequest>,
) -> Result<impl IntoResponse, ApiError> {
    svc.create_project(&user, &req)
        .map(|p| (StatusCode::CREATED, Json(p)))
}

async fn get_project(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.get_project(&user, &id).map(Json)
}

async fn add_member(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<AddMemberRequest>,
) -> Result<impl IntoResponse, ApiError> {
    svc.add_member(&user, &id, &req).map(Json)
}

async fn ingest(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    mut multipart: Multipart,
) -> Result<impl IntoResponse, ApiError> {
    let mut files = Vec::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::BadRequest(e.body_text()))?
    {
        let name = field
            .file_name()
            .or(field.name())
            .unwrap_or("upload")
            .to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::BadRequest(e.body_text()))?;
        files.push((name, bytes.to_vec()));
    }
    if files.is_empty() {
        return Err(ApiError::BadRequest("no files in upload".into()));
    }
    blocking(move || svc.ingest(&user, &id, files))
        .await
        .map(Json)
}

async fn assign(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<AssignRequest>,
) -> Result<impl IntoResponse, ApiError> {
    blocking(move || svc.assign(&user, &id, req.strategy))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    project: Option<String>,
    assignee: Option<String>,
}

async fn list_tasks(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Params(q): Params<TaskQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let assignee = q.assignee.map(|a| {
        if a == "me" {
            user.clone()
        } else {
            UserId::new(a)
        }
    });
    svc.list_tasks(&user, q.project.as_deref(), assignee.as_ref())
        .map(Json)
}

async fn predict(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.predict(&user, &id).await.map(Json)
}

async fn staged(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.staged(&user, &id).map(Json)
}

async fn accept(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<AcceptRequest>,
) -> Result<impl IntoResponse, ApiError> {
    svc.accept(&user, &id, &req).map(Json)
}

async fn task_annotations(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.task_annotations(&user, &id).map(Json)
}

async fn save_annotations(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<SaveAnnotationsRequest>,
) -> Result<impl IntoResponse, ApiError> {
    svc.save_annotations(&user, &id, &req.regions).map(Json)
}

async fn submit(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.submit(&user, &id).map(Json)
}

async fn annotation(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.annotation(&user, &id).map(Json)
}

async fn review(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<ReviewRequest>,
) -> Result<impl IntoResponse, ApiError> {
    svc.review(&user, &id, &req).map(Json)
}

async fn reopen(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.reopen(&user, &id).map(Json)
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    kind: ExportKind,
    format: Option<ExportFormat>,
    #[serde(default)]
    view: ExportView,
}

async fn export(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Params(q): Params<ExportQuery>,
) -> Result<Response, ApiError> {
    let format = q.format.unwrap_or(ExportFormat::Jsonl);
    blocking(move || svc.export(&user, &id, q.kind, format, q.view))
        .await
        .map(document)
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    #[serde(default)]
    format: ReportFormat,
}

async fn agreement(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Params(q): Params<ReportQuery>,
) -> Result<Response, ApiError> {
    blocking(move || svc.agreement(&user, &id, q.format))
        .await
        .map(document)
}

async fn ranking(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Params(q): Params<ReportQuery>,
) -> Result<Response, ApiError> {
    blocking(move || svc.ranking(&user, &id, q.format))
        .await
        .map(document)
}

async fn submit_preference(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<PreferenceRequest>,
) -> Result<impl IntoResponse, ApiError> {
    svc.submit_preference(&user, &id, &req)
        .map(|j| (StatusCode::CREATED, Json(j)))
}

async fn configure_model(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    yaml: String,
) -> Result<impl IntoResponse, ApiError> {
    svc.configure_model(&user, &id, &yaml).map(Json)
}

async fn finetune(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(req): Body<FinetuneBody>,
) -> Result<impl IntoResponse, ApiError> {
    svc.start_finetune(&user, &id, &req)
        .await
        .map(|s| (StatusCode::ACCEPTED, Json(s)))
}

async fn model_status(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.model_status(&user, &id).await.map(Json)
}

async fn fetch_weights(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    svc.fetch_weights(&user, &id).await.map(Json)
}

async fn weights(
    State(svc): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let (digest, bytes) = blocking(move || svc.weights(&user, &id)).await?;
    let mut resp = bytes.into_response();
    resp.headers_mut().insert(
        CONTENT_TYPE,
        HeaderValue::from_static("application/octet-stream"),
    );
    if let Ok(v) = HeaderValue::from_str(&digest) {
        resp.headers_mut().insert(WEIGHTS_DIGEST_HEADER, v);
    }
    Ok(resp)
}

async fn fallback() -> ApiError {
    ApiError::NotFound("no such route".into())
}

/// All routes, mounted under `/api`.
pub fn router(service: Arc<Service>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/auth/login", post(login))
        .route("/projects", post(create_project))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/members", post(add_member))
        .route(
            "/projects/{id}/tasks",
            post(ingest).layer(DefaultBodyLimit::max(1 << 30)),
        )
        .route("/projects/{id}/assign", post(assign))
        .route("/projects/{id}/export", get(export))
        .route("/projects/{id}/agreement", get(agreement))
        .route("/projects/{id}/ranking", get(ranking))
        .route("/projects/{id}/preferences", post(submit_preference))
        .route("/projects/{id}/model", post(configure_model))
        .route("/projects/{id}/model/finetune", post(finetune))
        .route("/projects/{id}/model/status", get(model_status))
        .route(
            "/projects/{id}/model/weights",
            post(fetch_weights).get(weights),
        )
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}/predict", post(predict))
        .route("/tasks/{id}/staged", get(staged))
        .route("/tasks/{id}/accept", post(accept))
        .route(
            "/tasks/{id}/annotations",
            get(task_annotations).put(save_annotations),
        )
        .route("/tasks/{id}/submit", post(submit))
        .route("/annotations/{id}", get(annotation))
        .route("/annotations/{id}/review", post(review))
        .route("/annotations/{id}/reopen", post(reopen))
        .fallback(fallback)
        .with_state(service);
    Router::new().nest("/api", api).fallback(fallback)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub config: ServiceConfig,
    /// Account created at startup when missing, as (username, secret).
    pub bootstrap: Option<(String, String)>,
}

/// Resolves on SIGINT or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Opens the store, binds, and serves until `shutdown` resolves. The bound
/// address is sent on `ready` once the listener is up, or printed as
/// `listening on ADDR` when there is no `ready` channel.
pub async fn serve(
    options: ServeOptions,
    ready: Option<tokio::sync::oneshot::Sender<SocketAddr>>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let store = Arc::new(Store::open(&options.data_dir)?);
    let service = Arc::new(Service::new(store.clone(), &options.config));
    if let Some((name, secret)) = &options.bootstrap {
        let user = service.ensure_user(name, secret)?;
        tracing::info!(user = %user.id, "bootstrap account ready");
    }
    let listener = TcpListener::bind(options.listen).await?;
    let addr = listener.local_addr()?;
    tracing::info!(%addr, data_dir = %options.data_dir.display(), "listening");
    match ready {
        Some(tx) => {
            let _ = tx.send(addr);
        }
        // a parent process reads this line to find an ephemeral port
        None => println!("listening on {addr}"),
    }
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await?;
    tracing::info!("shut down cleanly");
    Ok(())
}
