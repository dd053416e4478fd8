use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use super::assign::{plan_assignment, tasks_by_annotator};
use super::auth::{hash_secret, unix_now, verify_secret, Session, Sessions};
use super::error::{ApiError, RegionViolation};
use super::rbac::{enforce, EndpointClass, PermissionMatrix, Resource};
use super::staging::Staging;
use super::types::*;
use super::ServiceConfig;
use crate::consensus::{
    build_agreement_input, cluster_regions, consensus_regions, fleiss_kappa, DEFAULT_IOU_THRESHOLD,
};
use crate::domain::{
    mark_edited, transition_status, validate_grounding, validate_region, AnnotationRegion,
    AssignmentStrategy, AudioAsset, JudgmentId, PreferenceJudgment, Project, ProjectId, Provenance,
    RegionAction, RegionId, RegionStatus, Role, Task, TaskId, TaskStatus, User, UserId, Verdict,
};
use crate::export::{
    captions_document, regions_document, CaptionRecord, ExportFormat, RegionRecord,
};
use crate::gateway::{
    parse_config, predictions_to_regions, FinetuneExample, Gateway, JobStatus, Prediction,
};
use crate::preference::{rank_judgments, ranking_csv, RankedItem, DEFAULT_SIGMA_PRIOR};
use crate::storage::{ModelAttachment, Store, StoreError, Versioned};

/// Everything a request handler needs. Shared behind an `Arc`.
pub struct Service {
    store: Arc<Store>,
    gateway: Gateway,
    sessions: Sessions,
    staging: Staging,
    matrix: PermissionMatrix,
    ranking_cache: Mutex<HashMap<ProjectId, (RankingKey, Vec<RankedItem>)>>,
}

type RankingKey = (usize, usize, Option<String>);

struct TaskContext {
    task: Versioned<Task>,
    project: Versioned<Project>,
    asset: AudioAsset,
}

impl TaskContext {
    fn assignees(&self) -> Vec<&UserId> {
        self.task.value.assignees.keys().collect()
    }
}

fn region_order(a: &AnnotationRegion, b: &AnnotationRegion) -> std::cmp::Ordering {
    a.task_id
        .cmp(&b.task_id)
        .then_with(|| a.annotator_id.cmp(&b.annotator_id))
        .then_with(|| a.start_s.total_cmp(&b.start_s))
        .then_with(|| a.id.cmp(&b.id))
}

fn audio_path(project: &Project, asset: &AudioAsset) -> String {
    format!("{}/{}", project.slug(), asset.original_filename)
}

impl Service {
    pub fn new(store: Arc<Store>, config: &ServiceConfig) -> Self {
        Service {
            store,
            gateway: Gateway::new(config.gateway),
            sessions: Sessions::new(config.token_ttl),
            staging: Staging::new(config.staging_ttl),
            matrix: PermissionMatrix::default(),
            ranking_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn matrix(&self) -> &PermissionMatrix {
        &self.matrix
    }

    // ---- sessions and users

    pub fn authenticate(&self, token: &str) -> Result<Session, ApiError> {
        self.sessions.resolve(token).ok_or(ApiError::Unauthorized)
    }

    pub fn login(&self, req: &LoginRequest) -> Result<LoginResponse, ApiError> {
        let user = self
            .store
            .find_user_by_name(&req.username)
            .ok_or(ApiError::BadCredentials)?;
        if !verify_secret(&user.credential_hash, &req.secret) {
            return Err(ApiError::BadCredentials);
        }
        let s = self.sessions.issue(&user.id);
        Ok(LoginResponse {
            token: s.token,
            user_id: s.user_id,
            expires_at: s.expires_at,
        })
    }

    /// Creates the account if it does not exist yet. Used to seed the first
    /// operator; there is no self-registration.
    pub fn ensure_user(&self, username: &str, secret: &str) -> Result<User, ApiError> {
        if username.trim().is_empty() || secret.is_empty() {
            return Err(ApiError::BadRequest(
                "username and secret must be non-empty".into(),
            ));
        }
        self.store.transaction(|tx| {
            if let Some(u) = tx.values::<User>().find(|u| u.username == username) {
                return Ok(u.clone());
            }
            let user = User {
                id: UserId(tx.next_id("user")),
                username: username.to_string(),
                credential_hash: hash_secret(secret),
            };
            tx.insert(user.clone())?;
            Ok(user)
        })
    }

    // ---- authorization helpers

    fn project(&self, project_id: &str) -> Result<Versioned<Project>, ApiError> {
        self.store
            .get::<Project>(project_id)
            .map_err(|_| ApiError::NotFound(format!("project {project_id} not found")))
    }

    fn authorize(
        &self,
        user: &UserId,
        project: &Project,
        class: EndpointClass,
        resource: &Resource<'_>,
    ) -> Result<Role, ApiError> {
        enforce(&self.matrix, user, project, class, resource).map_err(ApiError::Forbidden)
    }

    fn task_context(&self, task_id: &str) -> Result<TaskContext, ApiError> {
        let task = self
            .store
            .get::<Task>(task_id)
            .map_err(|_| ApiError::NotFound(format!("task {task_id} not found")))?;
        let project = self.project(task.value.project_id.as_str())?;
        let asset = self
            .store
            .get::<AudioAsset>(task.value.audio_asset_id.as_str())?
            .value;
        Ok(TaskContext {
            task,
            project,
            asset,
        })
    }

    /// Annotator must be an assignee whose work on the task is still open.
    fn require_open(&self, ctx: &TaskContext, user: &UserId) -> Result<(), ApiError> {
        match ctx.task.value.assignees.get(user) {
            Some(TaskStatus::Unstarted | TaskStatus::InProgress) => Ok(()),
            Some(status) => Err(ApiError::Conflict(format!(
                "task {} is {status:?} for {user}; reopen a rejected region first",
                ctx.task.value.id
            ))),
            None => Err(ApiError::Forbidden(super::rbac::DenyReason::NotAssignee)),
        }
    }

    // ---- projects

    pub fn create_project(
        &self,
        user: &UserId,
        req: &CreateProjectRequest,
    ) -> Result<Project, ApiError> {
        self.store.transaction(|tx| {
            let mut members = BTreeMap::new();
            members.insert(user.clone(), Role::Manager);
            let project = Project {
                id: ProjectId(tx.next_id("project")),
                name: req.name.trim().to_string(),
                ontology: req.ontology.iter().map(|l| l.trim().to_string()).collect(),
                grounding_required: req.grounding_required,
                members,
                model_config_id: None,
                assignment_strategy: None,
            };
            let problems = project.check();
            if !problems.is_empty() {
                return Err(ApiError::BadRequest(problems.join("; ")));
            }
            tx.insert(project.clone())?;
            Ok(project)
        })
    }

    pub fn get_project(&self, user: &UserId, project_id: &str) -> Result<Project, ApiError> {
        let project = self.project(project_id)?.value;
        self.authorize(
            user,
            &project,
            EndpointClass::ReadProject,
            &Resource::default(),
        )?;
        Ok(project)
    }

    pub fn add_member(
        &self,
        user: &UserId,
        project_id: &str,
        req: &AddMemberRequest,
    ) -> Result<MemberResponse, ApiError> {
        let project = self.project(project_id)?;
        self.authorize(
            user,
            &project.value,
            EndpointClass::ManageMembers,
            &Resource::default(),
        )?;
        self.store.transaction(|tx| {
            let existing = tx
                .values::<User>()
                .find(|u| u.username == req.username)
                .cloned();
            let (member, created) = match existing {
                Some(u) => (u, false),
                None => {
                    let secret =
                        req.secret
                            .as_deref()
                            .filter(|s| !s.is_empty())
                            .ok_or_else(|| {
                                ApiError::BadRequest(format!(
                                    "user {} does not exist; a secret is required",
                                    req.username
                                ))
                            })?;
                    if req.username.trim().is_empty() {
                        return Err(ApiError::BadRequest("username is empty".into()));
                    }
                    let u = User {
                        id: UserId(tx.next_id("user")),
                        username: req.username.clone(),
                        credential_hash: hash_secret(secret),
                    };
                    tx.insert(u.clone())?;
                    (u, true)
                }
            };
            let current = tx.require::<Project>(project_id)?.clone();
            let mut next = current.value.clone();
            next.members.insert(member.id.clone(), req.role);
            let problems = next.check();
            if !problems.is_empty() {
                return Err(ApiError::Conflict(problems.join("; ")));
            }
            tx.update(next, current.version)?;
            Ok(MemberResponse {
                user_id: member.id,
                username: member.username,
                role: req.role,
                created,
            })
        })
    }

    // ---- tasks

    /// Stores each file and opens one task per new audio file. Failures are
    /// reported per file.
    pub fn ingest(
        &self,
        user: &UserId,
        project_id: &str,
        files: Vec<(String, Vec<u8>)>,
    ) -> Result<IngestResponse, ApiError> {
        let project = self.project(project_id)?;
        self.authorize(
            user,
            &project.value,
            EndpointClass::IngestTasks,
            &Resource::default(),
        )?;
        let mut results = Vec::with_capacity(files.len());
        for (filename, bytes) in files {
            let outcome = self
                .store
                .ingest_audio(&bytes, &filename)
                .and_then(|ingested| {
                    self.store.transaction(|tx| {
                        let asset_id = ingested.asset.id.clone();
                        if let Some(t) = tx.values::<Task>().find(|t| {
                            t.project_id.as_str() == project_id && t.audio_asset_id == asset_id
                        }) {
                            return Ok((t.id.clone(), false));
                        }
                        let task = Task {
                            id: TaskId(tx.next_id("task")),
                            project_id: project.value.id.clone(),
                            audio_asset_id: asset_id,
                            assignees: BTreeMap::new(),
                        };
                        tx.insert(task.clone())?;
                        Ok::<_, StoreError>((task.id, true))
                    })
                });
            results.push(match outcome {
                Ok((task_id, created)) => IngestResult {
                    filename,
                    status: if created {
                        IngestStatus::Created
                    } else {
                        IngestStatus::Skipped
                    },
                    task_id: Some(task_id),
                    error: None,
                },
                Err(e) => IngestResult {
                    filename,
                    status: IngestStatus::Error,
                    task_id: None,
                    error: Some(e.to_string()),
                },
            });
        }
        Ok(IngestResponse { results })
    }

    pub fn assign(
        &self,
        user: &UserId,
        project_id: &str,
        strategy: AssignmentStrategy,
    ) -> Result<AssignResponse, ApiError> {
        let project = self.project(project_id)?;
        self.authorize(
            user,
            &project.value,
            EndpointClass::AssignTasks,
            &Resource::default(),
        )?;
        let annotators = project.value.members_with(Role::Annotator);
        if annotators.is_empty() {
            return Err(ApiError::NoAnnotators);
        }
        self.store.transaction(|tx| {
            let mut tasks: Vec<Versioned<Task>> = tx
                .values::<Task>()
                .filter(|t| t.project_id.as_str() == project_id)
                .map(|t| tx.get::<Task>(t.id.as_str()).expect("listed").clone())
                .collect();
            tasks.sort_by(|a, b| a.value.id.cmp(&b.value.id));
            let plain: Vec<Task> = tasks.iter().map(|t| t.value.clone()).collect();
            let plan = plan_assignment(&plain, &annotators, strategy);
            for t in tasks {
                let assignees = plan.get(&t.value.id).cloned().unwrap_or_default();
                if assignees != t.value.assignees {
                    let mut next = t.value.clone();
                    next.assignees = assignees;
                    tx.update(next, t.version)?;
                }
            }
            let current = tx.require::<Project>(project_id)?.clone();
            if current.value.assignment_strategy != Some(strategy) {
                let mut next = current.value.clone();
                next.assignment_strategy = Some(strategy);
                tx.update(next, current.version)?;
            }
            Ok::<_, ApiError>(AssignResponse {
                strategy,
                assignments: tasks_by_annotator(&plan),
            })
        })
    }

    /// Tasks visible to the caller. Annotators only ever see their own
    /// queue; `assignee` narrows further.
    pub fn list_tasks(
        &self,
        user: &UserId,
        project_id: Option<&str>,
        assignee: Option<&UserId>,
    ) -> Result<Vec<TaskView>, ApiError> {
        if let Some(pid) = project_id {
            let project = self.project(pid)?;
            self.authorize(
                user,
                &project.value,
                EndpointClass::ListTasks,
                &Resource::default(),
            )?;
        }
        let out = self.store.read(|t| {
            let mut out = Vec::new();
            for task in t.values::<Task>() {
                let task = &task.value;
                if project_id.is_some_and(|p| task.project_id.as_str() != p) {
                    continue;
                }
                let Some(project) = t.get::<Project>(task.project_id.as_str()) else {
                    continue;
                };
                let Ok(role) = enforce(
                    &self.matrix,
                    user,
                    &project.value,
                    EndpointClass::ListTasks,
                    &Resource::default(),
                ) else {
                    continue;
                };
                if role == Role::Annotator && !task.assignees.contains_key(user) {
                    continue;
                }
                if assignee.is_some_and(|a| !task.assignees.contains_key(a)) {
                    continue;
                }
                let Some(asset) = t.get::<AudioAsset>(task.audio_asset_id.as_str()) else {
                    continue;
                };
                out.push(TaskView {
                    task: task.clone(),
                    filename: asset.value.original_filename.clone(),
                    format: asset.value.format,
                    duration_s: asset.value.duration_s,
                });
            }
            out
        });
        Ok(out)
    }

    // ---- prediction staging

    fn model_for(
        &self,
        project: &Project,
    ) -> Result<(ModelAttachment, crate::gateway::ModelBackendConfig), ApiError> {
        let id = project
            .model_config_id
            .as_deref()
            .ok_or(ApiError::NoModel)?;
        let attachment = self
            .store
            .get::<ModelAttachment>(id)
            .map_err(|_| ApiError::NoModel)?
            .value;
        let config = parse_config(&attachment.yaml)?;
        Ok((attachment, config))
    }

    fn staged_response(
        &self,
        ctx: &TaskContext,
        user: &UserId,
        predictions: Vec<Prediction>,
    ) -> StagedResponse {
        let items = predictions
            .into_iter()
            .enumerate()
            .map(|(index, prediction)| {
                let c = predictions_to_regions(
                    std::slice::from_ref(&prediction),
                    &ctx.task.value,
                    user,
                    &ctx.project.value,
                    &ctx.asset,
                );
                let mut preview = c.regions.into_iter().next();
                if let Some(p) = preview.as_mut() {
                    p.id = RegionId::new(format!("staged-{index}"));
                }
                StagedItem {
                    index,
                    prediction,
                    preview,
                    skipped: c.skipped.into_iter().next().map(|s| s.reason),
                }
            })
            .collect();
        StagedResponse {
            task_id: ctx.task.value.id.clone(),
            items,
        }
    }

    /// Runs the project's backend on the task audio and stages the result.
    /// Nothing is written to the store.
    pub async fn predict(&self, user: &UserId, task_id: &str) -> Result<StagedResponse, ApiError> {
        let ctx = self.task_context(task_id)?;
        let resource = Resource {
            task_assignees: Some(ctx.assignees()),
            ..Resource::default()
        };
        self.authorize(
            user,
            &ctx.project.value,
            EndpointClass::TriggerPredict,
            &resource,
        )?;
        let (_, config) = self.model_for(&ctx.project.value)?;
        let audio = self.store.read_blob(&ctx.asset.digest)?;
        let predictions = self.gateway.predict(&config, &ctx.asset, &audio).await?;
        self.staging.put(
            &ctx.task.value.id,
            user,
            predictions.clone(),
            Instant::now(),
        );
        Ok(self.staged_response(&ctx, user, predictions))
    }

    pub fn staged(&self, user: &UserId, task_id: &str) -> Result<StagedResponse, ApiError> {
        let ctx = self.task_context(task_id)?;
        let resource = Resource {
            task_assignees: Some(ctx.assignees()),
            ..Resource::default()
        };
        self.authorize(
            user,
            &ctx.project.value,
            EndpointClass::TriggerPredict,
            &resource,
        )?;
        let predictions = self.staging.get(&ctx.task.value.id, user, Instant::now());
        Ok(self.staged_response(&ctx, user, predictions))
    }

    /// Turns selected staged predictions into Draft regions and clears the
    /// stage.
    pub fn accept(
        &self,
        user: &UserId,
        task_id: &str,
        req: &AcceptRequest,
    ) -> Result<AcceptResponse, ApiError> {
        let ctx = self.task_context(task_id)?;
        let resource = Resource {
            task_assignees: Some(ctx.assignees()),
            ..Resource::default()
        };
        self.authorize(
            user,
            &ctx.project.value,
            EndpointClass::WriteAnnotations,
            &resource,
        )?;
        self.require_open(&ctx, user)?;
        let now = Instant::now();
        let staged = self.staging.take(&ctx.task.value.id, user, now);
        if staged.is_empty() {
            return Err(ApiError::NothingStaged);
        }
        let mut indices: Vec<usize> = match &req.indices {
            Some(list) => list.clone(),
            None => (0..staged.len()).collect(),
        };
        indices.sort_unstable();
        indices.dedup();
        if let Some(bad) = indices.iter().find(|&&i| i >= staged.len()) {
            let message = format!("index {bad} out of range for {} staged items", staged.len());
            self.staging.restore(&ctx.task.value.id, user, staged, now);
            return Err(ApiError::BadRequest(message));
        }
        let selected: Vec<Prediction> = indices.iter().map(|&i| staged[i].clone()).collect();
        let conversion = predictions_to_regions(
            &selected,
            &ctx.task.value,
            user,
            &ctx.project.value,
            &ctx.asset,
        );
        let skipped: Vec<usize> = conversion
            .skipped
            .iter()
            .map(|s| indices[s.index])
            .collect();
        let result = self.store.transaction(|tx| {
            let mut created = Vec::new();
            for mut region in conversion.regions.clone() {
                region.id = RegionId(tx.next_id("region"));
                let version = tx.insert(region.clone())?;
                created.push(RegionView { region, version });
            }
            mark_task_in_progress(tx, task_id, user)?;
            Ok::<_, ApiError>(created)
        });
        match result {
            Ok(regions) => Ok(AcceptResponse { regions, skipped }),
            Err(e) => {
                self.staging.restore(&ctx.task.value.id, user, staged, now);
                Err(e)
            }
        }
    }

    // ---- annotations

    pub fn task_annotations(
        &self,
        user: &UserId,
        task_id: &str,
    ) -> Result<Vec<RegionView>, ApiError> {
        let ctx = self.task_context(task_id)?;
        let resource = Resource {
            task_assignees: Some(ctx.assignees()),
            ..Resource::default()
        };
        let role = self.authorize(
            user,
            &ctx.project.value,
            EndpointClass::ReadAnnotations,
            &resource,
        )?;
        let mut out: Vec<RegionView> = self
            .store
            .list_versioned::<AnnotationRegion>(|r| {
                r.task_id.as_str() == task_id
                    && match role {
                        Role::Manager => true,
                        Role::Annotator => r.annotator_id == *user,
                        Role::Reviewer => r.status != RegionStatus::Draft,
                    }
            })
            .into_iter()
            .map(|v| RegionView {
                region: v.value,
                version: v.version,
            })
            .collect();
        out.sort_by(|a, b| region_order(&a.region, &b.region));
        Ok(out)
    }

    pub fn annotation(&self, user: &UserId, region_id: &str) -> Result<RegionView, ApiError> {
        let region = self
            .store
            .get::<AnnotationRegion>(region_id)
            .map_err(|_| ApiError::NotFound(format!("region {region_id} not found")))?;
        let ctx = self.task_context(region.value.task_id.as_str())?;
        let resource = Resource {
            task_assignees: Some(ctx.assignees()),
            region_owner: Some(&region.value.annotator_id),
            region_status: Some(region.value.status),
        };
        self.authorize(
            user,
            &ctx.project.value,
            EndpointClass::ReadAnnotations,
            &resource,
        )?;
        Ok(RegionView {
            region: region.value,
            version: region.version,
        })
    }

    /// Replaces the caller's Draft regions on a task with `edits`.
    pub fn save_annotations(
        &self,
        user: &UserId,
        task_id: &str,
        edits: &[RegionEdit],
    ) -> Result<Vec<RegionView>, ApiError> {
        let ctx = self.task_context(task_id)?;
        let resource = Resource {
            task_assignees: Some(ctx.assignees()),
            ..Resource::default()
        };
        self.authorize(
            user,
            &ctx.project.value,
            EndpointClass::WriteAnnotations,
            &resource,
        )?;
        self.require_open(&ctx, user)?;
        self.store.transaction(|tx| {
            let mine: BTreeMap<RegionId, Versioned<AnnotationRegion>> = tx
                .values::<AnnotationRegion>()
                .filter(|r| r.task_id.as_str() == task_id && r.annotator_id == *user)
                .map(|r| {
                    (
                        r.id.clone(),
                        tx.get::<AnnotationRegion>(r.id.as_str())
                            .expect("listed")
                            .clone(),
                    )
                })
                .collect();
            let mut kept: Vec<RegionId> = Vec::new();
            let mut violations = Vec::new();
            for (index, edit) in edits.iter().enumerate() {
                let caption = edit.caption.clone().filter(|c| !c.trim().is_empty());
                let next = match &edit.id {
                    Some(id) => {
                        let current = match mine.get(id) {
                            Some(c) => c,
                            None if tx.get::<AnnotationRegion>(id.as_str()).is_some() => {
                                return Err(ApiError::Forbidden(super::rbac::DenyReason::NotOwner))
                            }
                            None => {
                                return Err(ApiError::NotFound(format!("region {id} not found")))
                            }
                        };
                        if let Some(v) = edit.version {
                            if v != current.version {
                                return Err(StoreError::ConflictingWrite {
                                    kind: crate::storage::EntityKind::Region,
                                    key: id.to_string(),
                                    expected: v,
                                    actual: current.version,
                                }
                                .into());
                            }
                        }
                        let mut next = current.value.clone();
                        next.start_s = edit.start_s;
                        next.end_s = edit.end_s;
                        next.labels = edit.labels.clone();
                        next.caption = caption;
                        if !next.content_differs(&current.value) {
                            kept.push(id.clone());
                            continue;
                        }
                        if current.value.status != RegionStatus::Draft {
                            return Err(ApiError::Conflict(format!(
                                "region {id} is {} and cannot be edited",
                                current.value.status.as_str()
                            )));
                        }
                        let next = mark_edited(&next);
                        kept.push(id.clone());
                        (next, Some(current.version))
                    }
                    None => {
                        let region = AnnotationRegion {
                            id: RegionId(tx.next_id("region")),
                            task_id: ctx.task.value.id.clone(),
                            annotator_id: user.clone(),
                            start_s: edit.start_s,
                            end_s: edit.end_s,
                            labels: edit.labels.clone(),
                            caption,
                            provenance: Provenance::Human,
                            status: RegionStatus::Draft,
                            review: None,
                            confidence: None,
                        };
                        kept.push(region.id.clone());
                        (region, None)
                    }
                };
                let (region, base) = next;
                for v in validate_region(&region, &ctx.project.value, &ctx.asset) {
                    violations.push(RegionViolation::new(
                        Some(index),
                        edit.id.as_ref().map(|i| i.to_string()),
                        v,
                    ));
                }
                match base {
                    Some(version) => tx.update(region, version)?,
                    None => tx.insert(region)?,
                };
            }
            if !violations.is_empty() {
                return Err(ApiError::Validation(violations));
            }
            for (id, r) in &mine {
                if r.value.status == RegionStatus::Draft && !kept.contains(id) {
                    tx.delete::<AnnotationRegion>(id.as_str())?;
                }
            }
            mark_task_in_progress(tx, task_id, user)?;
            let mut out: Vec<RegionView> = tx
                .values::<AnnotationRegion>()
                .filter(|r| r.task_id.as_str() == task_id && r.annotator_id == *user)
                .map(|r| {
                    let v = tx.get::<AnnotationRegion>(r.id.as_str()).expect("listed");
                    RegionView {
                        region: v.value.clone(),
                        version: v.version,
                    }
                })
                .collect();
            out.sort_by(|a, b| region_order(&a.region, &b.region));
            Ok(out)
        })
    }

    pub fn submit(&self, user: &UserId, task_id: &str) -> Result<SubmitResponse, ApiError> {
        let ctx = self.task_context(task_id)?;
        let resource = Resource {
            task_assignees: Some(ctx.assignees()),
            ..Resource::default()
        };
        self.authorize(
            user,
            &ctx.project.value,
            EndpointClass::SubmitTask,
            &resource,
        )?;
        self.require_open(&ctx, user)?;
        self.store.transaction(|tx| {
            let drafts: Vec<Versioned<AnnotationRegion>> = tx
                .values::<AnnotationRegion>()
                .filter(|r| {
                    r.task_id.as_str() == task_id
                        && r.annotator_id == *user
                        && r.status == RegionStatus::Draft
                })
                .map(|r| {
                    tx.get::<AnnotationRegion>(r.id.as_str())
                        .expect("listed")
                        .clone()
                })
                .collect();
            let plain: Vec<AnnotationRegion> = drafts.iter().map(|d| d.value.clone()).collect();
            let mut violations: Vec<RegionViolation> =
                validate_grounding(&plain, &ctx.project.value, ctx.asset.duration_s)
                    .into_iter()
                    .map(|v| {
                        let id = match &v {
                            crate::domain::Violation::UngroundedCaption { region_id } => {
                                Some(region_id.clone())
                            }
                            _ => None,
                        };
                        RegionViolation::new(None, id, v)
                    })
                    .collect();
            for r in &plain {
                for v in validate_region(r, &ctx.project.value, &ctx.asset) {
                    violations.push(RegionViolation::new(None, Some(r.id.to_string()), v));
                }
            }
            if !violations.is_empty() {
                return Err(ApiError::Validation(violations));
            }
            for d in &drafts {
                let next = transition_status(&d.value, RegionAction::Submit)?;
                tx.update(next, d.version)?;
            }
            let task = tx.require::<Task>(task_id)?.clone();
            let mut next = task.value.clone();
            next.assignees.insert(user.clone(), TaskStatus::Submitted);
            tx.update(next, task.version)?;
            Ok(SubmitResponse {
                task_id: task.value.id.clone(),
                submitted: drafts.len(),
                status: TaskStatus::Submitted,
            })
        })
    }

    pub fn review(
        &self,
        user: &UserId,
        region_id: &str,
        req: &ReviewRequest,
    ) -> Result<RegionView, ApiError> {
        let region = self
            .store
            .get::<AnnotationRegion>(region_id)
            .map_err(|_| ApiError::NotFound(format!("region {region_id} not found")))?;
        let ctx = self.task_context(region.value.task_id.as_str())?;
        let resource = Resource {
            task_assignees: Some(ctx.assignees()),
            region_owner: Some(&region.value.annotator_id),
            region_status: Some(region.value.status),
        };
        self.authorize(
            user,
            &ctx.project.value,
            EndpointClass::ReviewAnnotation,
            &resource,
        )?;
        let action = match req.verdict {
            Verdict::Approve => RegionAction::Approve {
                reviewer: user.clone(),
                feedback: req.feedback.clone(),
            },
            Verdict::Reject => RegionAction::Reject {
                reviewer: user.clone(),
                feedback: req.feedback.clone().unwrap_or_default(),
            },
        };
        self.store.transaction(|tx| {
            let current = tx.require::<AnnotationRegion>(region_id)?.clone();
            let next = transition_status(&current.value, action)?;
            let version = tx.update(next.clone(), current.version)?;
            let annotator = next.annotator_id.clone();
            let task_id = next.task_id.as_str();
            let pending = tx.values::<AnnotationRegion>().any(|r| {
                r.task_id.as_str() == task_id
                    && r.annotator_id == annotator
                    && matches!(r.status, RegionStatus::Draft | RegionStatus::Submitted)
            });
            if !pending {
                let task = tx.require::<Task>(task_id)?.clone();
                if task.value.assignees.get(&annotator) == Some(&TaskStatus::Submitted) {
                    let mut t = task.value.clone();
                    t.assignees.insert(annotator, TaskStatus::Reviewed);
                    tx.update(t, task.version)?;
                }
            }
            Ok::<_, ApiError>(RegionView {
                region: next,
                version,
            })
        })
    }

    /// Moves a rejected region back to Draft and reopens the owner's task.
    pub fn reopen(&self, user: &UserId, region_id: &str) -> Result<RegionView, ApiError> {
        let region = self
            .store
            .get::<AnnotationRegion>(region_id)
            .map_err(|_| ApiError::NotFound(format!("region {region_id} not found")))?;
        let ctx = self.task_context(region.value.task_id.as_str())?;
        let resource = Resource {
            task_assignees: Some(ctx.assignees()),
            region_owner: Some(&region.value.annotator_id),
            region_status: Some(region.value.status),
        };
        self.authorize(
            user,
            &ctx.project.value,
            EndpointClass::WriteAnnotations,
            &resource,
        )?;
        self.store.transaction(|tx| {
            let current = tx.require::<AnnotationRegion>(region_id)?.clone();
            let next = transition_status(&current.value, RegionAction::Reopen)?;
            let task = tx.require::<Task>(current.value.task_id.as_str())?.clone();
            let status = task.value.assignees.get(user).copied();
            match status {
                Some(TaskStatus::Reviewed) => {
                    let mut t = task.value.clone();
                    t.assignees.insert(user.clone(), TaskStatus::InProgress);
                    tx.update(t, task.version)?;
                }
                Some(TaskStatus::InProgress) => {}
                _ => {
                    return Err(ApiError::Conflict(format!(
                        "task {} is still under review",
                        task.value.id
                    )))
                }
            }
            let version = tx.update(next.clone(), current.version)?;
            Ok(RegionView {
                region: next,
                version,
            })
        })
    }

    // ---- exports and reports

    fn project_snapshot(
        &self,
        project_id: &str,
    ) -> (
        Vec<Task>,
        BTreeMap<String, AudioAsset>,
        Vec<AnnotationRegion>,
    ) {
        self.store.read(|t| {
            let mut tasks: Vec<Task> = t
                .values::<Task>()
                .filter(|v| v.value.project_id.as_str() == project_id)
                .map(|v| v.value.clone())
                .collect();
            tasks.sort_by(|a, b| a.id.cmp(&b.id));
            let assets = tasks
                .iter()
                .filter_map(|task| t.get::<AudioAsset>(task.audio_asset_id.as_str()))
                .map(|a| (a.value.id.to_string(), a.value.clone()))
                .collect();
            let ids: std::collections::BTreeSet<&str> =
                tasks.iter().map(|t| t.id.as_str()).collect();
            let regions = t
                .values::<AnnotationRegion>()
                .filter(|r| ids.contains(r.value.task_id.as_str()))
                .map(|r| r.value.clone())
                .collect();
            (tasks, assets, regions)
        })
    }

    /// Majority consensus regions for every task of a project.
    fn consensus_for(
        &self,
        project: &Project,
        tasks: &[Task],
        regions: &[AnnotationRegion],
    ) -> Vec<AnnotationRegion> {
        let annotators = project.members_with(Role::Annotator);
        let mut out = Vec::new();
        for task in tasks {
            let raters = task
                .assignees
                .keys()
                .filter(|u| annotators.contains(u))
                .count();
            let members: Vec<AnnotationRegion> = regions
                .iter()
                .filter(|r| {
                    r.task_id == task.id
                        && annotators.contains(&r.annotator_id)
                        && matches!(r.status, RegionStatus::Submitted | RegionStatus::Approved)
                })
                .cloned()
                .collect();
            let clusters = cluster_regions(&members, DEFAULT_IOU_THRESHOLD);
            out.extend(consensus_regions(&clusters, raters, &project.ontology).regions);
        }
        out
    }

    pub fn export(
        &self,
        user: &UserId,
        project_id: &str,
        kind: ExportKind,
        format: ExportFormat,
        view: ExportView,
    ) -> Result<Document, ApiError> {
        let project = self.project(project_id)?.value;
        self.authorize(user, &project, EndpointClass::Export, &Resource::default())?;
        let (tasks, assets, raw) = self.project_snapshot(project_id);
        let regions = match view {
            ExportView::Raw => raw,
            ExportView::Consensus => self.consensus_for(&project, &tasks, &raw),
        };
        let path_of = |r: &AnnotationRegion| -> Option<String> {
            let task = tasks.iter().find(|t| t.id == r.task_id)?;
            let asset = assets.get(task.audio_asset_id.as_str())?;
            Some(audio_path(&project, asset))
        };
        let (body, records) = match kind {
            ExportKind::Captions => {
                let records: Vec<CaptionRecord> = regions
                    .iter()
                    .filter(|r| r.status == RegionStatus::Approved && r.has_caption())
                    .filter_map(|r| {
                        Some(CaptionRecord {
                            audio_path: path_of(r)?,
                            text_caption: r.caption.clone()?,
                            start: r.start_s,
                            end: r.end_s,
                        })
                    })
                    .collect();
                let n = records.len();
                (captions_document(records, format), n)
            }
            ExportKind::Regions => {
                let with_annotator = view == ExportView::Raw;
                let records: Vec<RegionRecord> = regions
                    .iter()
                    .filter_map(|r| {
                        Some(RegionRecord {
                            audio_path: path_of(r)?,
                            start: r.start_s,
                            end: r.end_s,
                            labels: r.labels.clone(),
                            annotator_id: with_annotator.then(|| r.annotator_id.to_string()),
                            status: r.status,
                            provenance: r.provenance,
                        })
                    })
                    .collect();
                let n = records.len();
                (regions_document(records, format, with_annotator), n)
            }
        };
        Ok(Document {
            content_type: format.content_type(),
            body,
            records,
        })
    }

    /// Fleiss' Kappa over region clusters of tasks that every annotator of
    /// the project was assigned.
    pub fn agreement(
        &self,
        user: &UserId,
        project_id: &str,
        format: ReportFormat,
    ) -> Result<Document, ApiError> {
        let project = self.project(project_id)?.value;
        self.authorize(
            user,
            &project,
            EndpointClass::ReadAgreement,
            &Resource::default(),
        )?;
        let roster = project.members_with(Role::Annotator);
        let (tasks, _, regions) = self.project_snapshot(project_id);
        let mut clusters = Vec::new();
        for task in tasks
            .iter()
            .filter(|t| roster.iter().all(|u| t.assignees.contains_key(u)))
        {
            let members: Vec<AnnotationRegion> = regions
                .iter()
                .filter(|r| {
                    r.task_id == task.id
                        && roster.contains(&r.annotator_id)
                        && matches!(r.status, RegionStatus::Submitted | RegionStatus::Approved)
                })
                .cloned()
                .collect();
            clusters.extend(cluster_regions(&members, DEFAULT_IOU_THRESHOLD));
        }
        let input = build_agreement_input(&clusters, &roster, &project.ontology);
        let report = match fleiss_kappa(&input.counts, input.raters) {
            Ok(r) => r.with_categories(input.categories),
            Err(e) => {
                let note = serde_json::json!({ "empty": true, "note": e.to_string() });
                return Ok(match format {
                    ReportFormat::Json => Document {
                        content_type: "application/json",
                        body: format!("{note}\n"),
                        records: 0,
                    },
                    ReportFormat::Csv => Document {
                        content_type: "text/csv",
                        body: String::new(),
                        records: 0,
                    },
                });
            }
        };
        Ok(match format {
            ReportFormat::Json => Document {
                content_type: "application/json",
                body: format!(
                    "{}\n",
                    serde_json::to_string(&report).expect("report serializes")
                ),
                records: report.counts.len(),
            },
            ReportFormat::Csv => Document {
                content_type: "text/csv",
                body: report.counts_csv(),
                records: report.counts.len(),
            },
        })
    }

    // ---- preferences

    /// Preference items of a project: its audio assets in ingestion order.
    fn preference_items(&self, project_id: &str) -> Vec<String> {
        let (tasks, _, _) = self.project_snapshot(project_id);
        let mut items: Vec<String> = Vec::new();
        for t in tasks {
            let id = t.audio_asset_id.to_string();
            if !items.contains(&id) {
                items.push(id);
            }
        }
        items
    }

    pub fn submit_preference(
        &self,
        user: &UserId,
        project_id: &str,
        req: &PreferenceRequest,
    ) -> Result<PreferenceJudgment, ApiError> {
        let project = self.project(project_id)?.value;
        self.authorize(
            user,
            &project,
            EndpointClass::SubmitPreference,
            &Resource::default(),
        )?;
        let items = self.preference_items(project_id);
        for item in [&req.item_a, &req.item_b] {
            if !items.contains(item) {
                return Err(ApiError::BadRequest(format!("unknown item {item}")));
            }
        }
        let judgment = self.store.transaction(|tx| {
            let judgment = PreferenceJudgment {
                id: JudgmentId(tx.next_id("judgment")),
                project_id: project.id.clone(),
                item_a: req.item_a.clone(),
                item_b: req.item_b.clone(),
                rater_id: user.clone(),
                winner: req.winner,
                timestamp: unix_now(),
            };
            let problems = judgment.check(&project);
            if !problems.is_empty() {
                return Err(ApiError::BadRequest(problems.join("; ")));
            }
            tx.insert(judgment.clone())?;
            Ok(judgment)
        })?;
        self.ranking_cache
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .remove(&project.id);
        Ok(judgment)
    }

    pub fn ranking(
        &self,
        user: &UserId,
        project_id: &str,
        format: ReportFormat,
    ) -> Result<Document, ApiError> {
        let project = self.project(project_id)?.value;
        self.authorize(
            user,
            &project,
            EndpointClass::ReadRanking,
            &Resource::default(),
        )?;
        let items = self.preference_items(project_id);
        let mut judgments = self
            .store
            .list::<PreferenceJudgment>(|j| j.project_id.as_str() == project_id);
        judgments.sort_by(|a, b| a.id.cmp(&b.id));
        let key: RankingKey = (
            judgments.len(),
            items.len(),
            judgments.last().map(|j| j.id.to_string()),
        );
        let cached = {
            let cache = self.ranking_cache.lock().unwrap_or_else(|p| p.into_inner());
            cache
                .get(&project.id)
                .filter(|(k, _)| *k == key)
                .map(|(_, r)| r.clone())
        };
        let ranked = match cached {
            Some(r) => r,
            None => {
                let r = rank_judgments(&items, &judgments, DEFAULT_SIGMA_PRIOR)?;
                self.ranking_cache
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .insert(project.id.clone(), (key, r.clone()));
                r
            }
        };
        let records = ranked.len();
        Ok(match format {
            ReportFormat::Json => Document {
                content_type: "application/json",
                body: format!(
                    "{}\n",
                    serde_json::to_string(
                        &serde_json::json!({ "judgments": judgments.len(), "ranking": ranked })
                    )
                    .expect("ranking serializes")
                ),
                records,
            },
            ReportFormat::Csv => Document {
                content_type: "text/csv",
                body: ranking_csv(&ranked),
                records,
            },
        })
    }

    // ---- model backend

    pub fn configure_model(
        &self,
        user: &UserId,
        project_id: &str,
        yaml: &str,
    ) -> Result<ModelStatus, ApiError> {
        let project = self.project(project_id)?;
        self.authorize(
            user,
            &project.value,
            EndpointClass::ConfigureModel,
            &Resource::default(),
        )?;
        let config = parse_config(yaml)?;
        self.store.transaction(|tx| {
            let current = tx.require::<Project>(project_id)?.clone();
            let id = match &current.value.model_config_id {
                Some(id) => id.clone(),
                None => tx.next_id("model"),
            };
            tx.put(ModelAttachment {
                id: id.clone(),
                project_id: current.value.id.clone(),
                yaml: yaml.to_string(),
                last_job: None,
                job_epochs: None,
                weights_digest: None,
            });
            if current.value.model_config_id.as_deref() != Some(id.as_str()) {
                let mut next = current.value.clone();
                next.model_config_id = Some(id.clone());
                tx.update(next, current.version)?;
            }
            Ok::<_, ApiError>(ModelStatus {
                model_id: id,
                config,
                job: None,
                epochs: None,
                weights_digest: None,
            })
        })
    }

    fn model_status_of(
        attachment: &ModelAttachment,
        config: crate::gateway::ModelBackendConfig,
    ) -> ModelStatus {
        ModelStatus {
            model_id: attachment.id.clone(),
            config,
            job: attachment.last_job.clone(),
            epochs: attachment.job_epochs,
            weights_digest: attachment.weights_digest.clone(),
        }
    }

    /// Saves the last fine-tune state seen from the backend.
    fn record_model(&self, attachment: ModelAttachment) -> Result<(), ApiError> {
        self.store.transaction(|tx| {
            tx.put(attachment);
            Ok::<_, ApiError>(())
        })
    }

    fn finetune_examples(&self, project: &Project, dataset: DatasetKind) -> Vec<FinetuneExample> {
        let (tasks, assets, regions) = self.project_snapshot(project.id.as_str());
        let mut examples = Vec::new();
        for r in regions
            .iter()
            .filter(|r| r.status == RegionStatus::Approved)
        {
            let Some(task) = tasks.iter().find(|t| t.id == r.task_id) else {
                continue;
            };
            let Some(asset) = assets.get(task.audio_asset_id.as_str()) else {
                continue;
            };
            let path = audio_path(project, asset);
            match dataset {
                DatasetKind::Regions => examples.push(FinetuneExample::Region(RegionRecord {
                    audio_path: path,
                    start: r.start_s,
                    end: r.end_s,
                    labels: r.labels.clone(),
                    annotator_id: Some(r.annotator_id.to_string()),
                    status: r.status,
                    provenance: r.provenance,
                })),
                DatasetKind::Captions => {
                    if let Some(text) = r.caption.clone().filter(|c| !c.trim().is_empty()) {
                        examples.push(FinetuneExample::Caption(CaptionRecord {
                            audio_path: path,
                            text_caption: text,
                            start: r.start_s,
                            end: r.end_s,
                        }));
                    }
                }
            }
        }
        examples
    }

    pub async fn start_finetune(
        &self,
        user: &UserId,
        project_id: &str,
        body: &FinetuneBody,
    ) -> Result<ModelStatus, ApiError> {
        let project = self.project(project_id)?.value;
        self.authorize(
            user,
            &project,
            EndpointClass::ConfigureModel,
            &Resource::default(),
        )?;
        let (mut attachment, config) = self.model_for(&project)?;
        let examples = self.finetune_examples(&project, body.dataset);
        let job = self
            .gateway
            .start_finetune(&config, body.epochs, body.learning_rate, examples)
            .await?;
        attachment.last_job = Some(job);
        attachment.job_epochs = Some(body.epochs);
        self.record_model(attachment.clone())?;
        Ok(Self::model_status_of(&attachment, config))
    }

    /// Current model state; a running job is polled first.
    pub async fn model_status(
        &self,
        user: &UserId,
        project_id: &str,
    ) -> Result<ModelStatus, ApiError> {
        let project = self.project(project_id)?.value;
        self.authorize(
            user,
            &project,
            EndpointClass::ConfigureModel,
            &Resource::default(),
        )?;
        let (mut attachment, config) = self.model_for(&project)?;
        if let Some(job) = attachment
            .last_job
            .as_ref()
            .filter(|j| j.status == JobStatus::Running)
        {
            let polled = self
                .gateway
                .poll_finetune(&config, &job.job_id, attachment.job_epochs)
                .await?;
            if attachment.last_job.as_ref() != Some(&polled) {
                attachment.last_job = Some(polled);
                self.record_model(attachment.clone())?;
            }
        }
        Ok(Self::model_status_of(&attachment, config))
    }

    pub async fn fetch_weights(
        &self,
        user: &UserId,
        project_id: &str,
    ) -> Result<WeightsResponse, ApiError> {
        let project = self.project(project_id)?.value;
        self.authorize(
            user,
            &project,
            EndpointClass::ConfigureModel,
            &Resource::default(),
        )?;
        let (mut attachment, config) = self.model_for(&project)?;
        let (bytes, digest) = self.gateway.download_weights(&config).await?;
        self.store.write_blob(&bytes)?;
        attachment.weights_digest = Some(digest.clone());
        self.record_model(attachment)?;
        Ok(WeightsResponse {
            digest,
            bytes: bytes.len() as u64,
        })
    }

    pub fn weights(&self, user: &UserId, project_id: &str) -> Result<(String, Vec<u8>), ApiError> {
        let project = self.project(project_id)?.value;
        self.authorize(
            user,
            &project,
            EndpointClass::ConfigureModel,
            &Resource::default(),
        )?;
        let (attachment, _) = self.model_for(&project)?;
        let digest = attachment
            .weights_digest
            .ok_or_else(|| ApiError::NotFound("no weights downloaded yet".into()))?;
        let bytes = self.store.read_blob(&digest)?;
        Ok((digest, bytes))
    }
}

fn mark_task_in_progress(
    tx: &mut crate::storage::Transaction<'_>,
    task_id: &str,
    user: &UserId,
) -> Result<(), StoreError> {
    let task = tx.require::<Task>(task_id)?.clone();
    if task.value.assignees.get(user) == Some(&TaskStatus::Unstarted) {
        let mut next = task.value.clone();
        next.assignees.insert(user.clone(), TaskStatus::InProgress);
        tx.update(next, task.version)?;
    }
    Ok(())
}
