use reqwest::multipart::{Form, Part};
use reqwest::{Method, RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::api::types::*;
use crate::domain::{AssignmentStrategy, Project, Role};
use crate::export::ExportFormat;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {server}: {message}")]
    Transport { server: String, message: String },
    #[error("{status}: {message}")]
    Api {
        status: StatusCode,
        code: String,
        message: String,
        body: String,
    },
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("no session token; run `login` or set AURALABEL_TOKEN")]
    NoToken,
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// A fetched report or export: the body exactly as the API sent it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDocument {
    pub content_type: String,
    pub records: usize,
    pub body: String,
}

/// Typed HTTP client for the `/api` routes.
#[derive(Debug, Clone)]
pub struct ApiClient {
    http: reqwest::Client,
    server: String,
    token: Option<String>,
}

impl ApiClient {
    pub fn new(server: impl Into<String>, token: Option<String>) -> Self {
        ApiClient {
            http: reqwest::Client::new(),
            server: server.into().trim_end_matches('/').to_string(),
            token,
        }
    }

    pub fn server(&self) -> &str {
        &self.server
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn request(&self, method: Method, path: &str) -> Result<RequestBuilder, ClientError> {
        let token = self.token.as_deref().ok_or(ClientError::NoToken)?;
        Ok(self
            .http
            .request(method, format!("{}/api{path}", self.server))
            .bearer_auth(token))
    }

    async fn send(&self, req: RequestBuilder) -> Result<Response, ClientError> {
        let resp = req.send().await.map_err(|e| ClientError::Transport {
            server: self.server.clone(),
            message: e.to_string(),
        })?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let body = resp.text().await.unwrap_or_default();
        let parsed: serde_json::Value = serde_json::from_str(&body).unwrap_or_default();
        let code = parsed["error"].as_str().unwrap_or("error").to_string();
        let message = parsed["message"]
            .as_str()
            .or(parsed["reason"].as_str())
            .map(str::to_string)
            .unwrap_or_else(|| body.clone());
        Err(ClientError::Api {
            status,
            code,
            message,
            body,
        })
    }

    async fn json<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        let resp = self.send(req).await?;
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        self.json(self.request(Method::POST, path)?.json(body))
            .await
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        let req = self.http.get(format!("{}/api/health", self.server));
        self.json(req).await
    }

    pub async fn login(&self, username: &str, secret: &str) -> Result<LoginResponse, ClientError> {
        let req = self
            .http
            .post(format!("{}/api/auth/login", self.server))
            .json(&LoginRequest {
                username: username.to_string(),
                secret: secret.to_string(),
            });
        self.json(req).await
    }

    pub async fn create_project(&self, req: &CreateProjectRequest) -> Result<Project, ClientError> {
        self.post("/projects", req).await
    }

    pub async fn add_member(
        &self,
        project: &str,
        username: &str,
        role: Role,
        secret: Option<String>,
    ) -> Result<MemberResponse, ClientError> {
        let body = AddMemberRequest {
            username: username.to_string(),
            role,
            secret,
        };
        self.post(&format!("/projects/{project}/members"), &body)
            .await
    }

    /// Uploads one file. Per-file problems come back inside the response.
    pub async fn upload(
        &self,
        project: &str,
        filename: &str,
        bytes: Vec<u8>,
    ) -> Result<IngestResponse, ClientError> {
        let form = Form::new().part("file", Part::bytes(bytes).file_name(filename.to_string()));
        let req = self
            .request(Method::POST, &format!("/projects/{project}/tasks"))?
            .multipart(form);
        self.json(req).await
    }

    pub async fn assign(
        &self,
        project: &str,
        strategy: AssignmentStrategy,
    ) -> Result<AssignResponse, ClientError> {
        self.post(
            &format!("/projects/{project}/assign"),
            &AssignRequest { strategy },
        )
        .await
    }

    async fn document(&self, path: &str) -> Result<RawDocument, ClientError> {
        let resp = self.send(self.request(Method::GET, path)?).await?;
        let header = |name: &str| {
            resp.headers()
                .get(name)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        };
        let content_type = header("content-type").unwrap_or_default();
        let records = header(crate::api::EXPORT_RECORDS_HEADER)
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        let body = resp
            .text()
            .await
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok(RawDocument {
            content_type,
            records,
            body,
        })
    }

    pub async fn export(
        &self,
        project: &str,
        kind: ExportKind,
        format: ExportFormat,
        view: ExportView,
    ) -> Result<RawDocument, ClientError> {
        let kind = match kind {
            ExportKind::Regions => "regions",
            ExportKind::Captions => "captions",
        };
        let format = match format {
            ExportFormat::Jsonl => "jsonl",
            ExportFormat::Csv => "csv",
        };
        let view = match view {
            ExportView::Raw => "raw",
            ExportView::Consensus => "consensus",
        };
        self.document(&format!(
            "/projects/{project}/export?kind={kind}&format={format}&view={view}"
        ))
        .await
    }

    pub async fn agreement(
        &self,
        project: &str,
        format: ReportFormat,
    ) -> Result<RawDocument, ClientError> {
        self.document(&format!(
            "/projects/{project}/agreement?format={}",
            report_format(format)
        ))
        .await
    }

    pub async fn ranking(
        &self,
        project: &str,
        format: ReportFormat,
    ) -> Result<RawDocument, ClientError> {
        self.document(&format!(
            "/projects/{project}/ranking?format={}",
            report_format(format)
        ))
        .await
    }
}

fn report_format(f: ReportFormat) -> &'static str {
    match f {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
    }
}
