//! Role-based access control: a deny-by-default (role, endpoint class)
//! matrix plus per-resource ownership rules.

use std::fmt;

use serde::Serialize;

use crate::domain::{Project, RegionStatus, Role, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointClass {
    ReadProject,
    ManageMembers,
    IngestTasks,
    AssignTasks,
    ListTasks,
    TriggerPredict,
    WriteAnnotations,
    SubmitTask,
    ReadAnnotations,
    ReviewAnnotation,
    ConfigureModel,
    Export,
    ReadAgreement,
    SubmitPreference,
    ReadRanking,
}

impl EndpointClass {
    pub const ALL: [EndpointClass; 15] = [
        EndpointClass::ReadProject,
        EndpointClass::ManageMembers,
        EndpointClass::IngestTasks,
        EndpointClass::AssignTasks,
        EndpointClass::ListTasks,
        EndpointClass::TriggerPredict,
        EndpointClass::WriteAnnotations,
        EndpointClass::SubmitTask,
        EndpointClass::ReadAnnotations,
        EndpointClass::ReviewAnnotation,
        EndpointClass::ConfigureModel,
        EndpointClass::Export,
        EndpointClass::ReadAgreement,
        EndpointClass::SubmitPreference,
        EndpointClass::ReadRanking,
    ];

    /// Classes that only read.
    pub fn is_read(self) -> bool {
        matches!(
            self,
            EndpointClass::ReadProject
                | EndpointClass::ListTasks
                | EndpointClass::ReadAnnotations
                | EndpointClass::Export
                | EndpointClass::ReadAgreement
                | EndpointClass::ReadRanking
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    NotMember,
    RoleDenied,
    NotAssignee,
    NotOwner,
    StatusHidden,
}

impl DenyReason {
    pub fn code(self) -> &'static str {
        match self {
            DenyReason::NotMember => "not_member",
            DenyReason::RoleDenied => "role_denied",
            DenyReason::NotAssignee => "not_assignee",
            DenyReason::NotOwner => "not_owner",
            DenyReason::StatusHidden => "status_hidden",
        }
    }
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Which (role, class) pairs are allowed at all. Everything not listed is
/// denied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermissionMatrix {
    allowed: Vec<(Role, EndpointClass)>,
}

impl Default for PermissionMatrix {
    fn default() -> Self {
        use EndpointClass::*;
        let mut allowed = Vec::new();
        for class in [
            ReadProject,
            ManageMembers,
            IngestTasks,
            AssignTasks,
            ListTasks,
            ReadAnnotations,
            ReviewAnnotation,
            ConfigureModel,
            Export,
            ReadAgreement,
            SubmitPreference,
            ReadRanking,
        ] {
            allowed.push((Role::Manager, class));
        }
        for class in [
            ReadProject,
            ListTasks,
            TriggerPredict,
            WriteAnnotations,
            SubmitTask,
            ReadAnnotations,
            SubmitPreference,
        ] {
            allowed.push((Role::Annotator, class));
        }
        for class in [
            ReadProject,
            ListTasks,
            ReadAnnotations,
            ReviewAnnotation,
            SubmitPreference,
            ReadRanking,
        ] {
            allowed.push((Role::Reviewer, class));
        }
        PermissionMatrix { allowed }
    }
}

impl PermissionMatrix {
    pub fn allows(&self, role: Role, class: EndpointClass) -> bool {
        self.allowed.contains(&(role, class))
    }
}

/// What the request touches, beyond the project itself.
#[derive(Debug, Clone, Default)]
pub struct Resource<'a> {
    /// The task's assignees, for task-scoped requests.
    pub task_assignees: Option<Vec<&'a UserId>>,
    /// Author of the region being read or written.
    pub region_owner: Option<&'a UserId>,
    pub region_status: Option<RegionStatus>,
}

/// Decides one request. Returns the caller's role when allowed.
pub fn enforce(
    matrix: &PermissionMatrix,
    user: &UserId,
    project: &Project,
    class: EndpointClass,
    resource: &Resource<'_>,
) -> Result<Role, DenyReason> {
    let role = project.role_of(user).ok_or(DenyReason::NotMember)?;
    if !matrix.allows(role, class) {
        return Err(DenyReason::RoleDenied);
    }
    match role {
        Role::Manager => {}
        Role::Annotator => {
            let task_scoped = matches!(
                class,
                EndpointClass::TriggerPredict
                    | EndpointClass::WriteAnnotations
                    | EndpointClass::SubmitTask
                    | EndpointClass::ReadAnnotations
            );
            if task_scoped {
                if let Some(assignees) = &resource.task_assignees {
                    if !assignees.contains(&user) {
                        return Err(DenyReason::NotAssignee);
                    }
                }
                if let Some(owner) = resource.region_owner {
                    if owner != user {
                        return Err(DenyReason::NotOwner);
                    }
                }
            }
        }
        Role::Reviewer => {
            if class == EndpointClass::ReadAnnotations
                && resource.region_status == Some(RegionStatus::Draft)
            {
                return Err(DenyReason::StatusHidden);
            }
        }
    }
    Ok(role)
}
