//! Request and response bodies of the HTTP API.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    AnnotationRegion, AssignmentStrategy, AudioFormat, RegionId, Role, Side, Task, TaskId,
    TaskStatus, UserId, Verdict,
};
use crate::gateway::{FinetuneJob, ModelBackendConfig, Prediction};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub secret: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub user_id: UserId,
    pub expires_at: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateProjectRequest {
    pub name: String,
    pub ontology: Vec<String>,
    #[serde(default)]
    pub grounding_required: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AddMemberRequest {
    pub username: String,
    pub role: Role,
    /// Creates the account when the username is new; ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberResponse {
    pub user_id: UserId,
    pub username: String,
    pub role: Role,
    pub created: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestStatus {
    Created,
    Skipped,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResult {
    pub filename: String,
    pub status: IngestStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<TaskId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub results: Vec<IngestResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignRequest {
    pub strategy: AssignmentStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignResponse {
    pub strategy: AssignmentStrategy,
    pub assignments: BTreeMap<UserId, Vec<TaskId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    #[serde(flatten)]
    pub task: Task,
    pub filename: String,
    pub format: AudioFormat,
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionView {
    #[serde(flatten)]
    pub region: AnnotationRegion,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedItem {
    pub index: usize,
    pub prediction: Prediction,
    /// The region an accept would create; absent when it would be skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview: Option<AnnotationRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedResponse {
    pub task_id: TaskId,
    pub items: Vec<StagedItem>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AcceptRequest {
    /// Indices into the staged list; absent means all.
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptResponse {
    pub regions: Vec<RegionView>,
    pub skipped: Vec<usize>,
}

/// One region in a save request. Without `id` it is a new region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEdit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<RegionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaveAnnotationsRequest {
    pub regions: Vec<RegionEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub task_id: TaskId,
    pub submitted: usize,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub verdict: Verdict,
    #[serde(default)]
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Regions,
    Captions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneBody {
    pub epochs: u32,
    pub learning_rate: f64,
    #[serde(default)]
    pub dataset: DatasetKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStatus {
    pub model_id: String,
    pub config: ModelBackendConfig,
    pub job: Option<FinetuneJob>,
    pub epochs: Option<u32>,
    pub weights_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsResponse {
    pub digest: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceRequest {
    pub item_a: String,
    pub item_b: String,
    pub winner: Side,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    #[default]
    Regions,
    Captions,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportView {
    #[default]
    Raw,
    Consensus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

/// A rendered document plus its media type.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub content_type: &'static str,
    pub body: String,
    pub records: usize,
}
