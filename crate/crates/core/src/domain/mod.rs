//! Entity types shared by storage, the HTTP service and exports.
//!
//! Everything here is a plain value: mutation happens by building a new
//! value and handing it to the store.

mod status;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use status::{mark_edited, transition_status, RegionAction, TransitionError};
pub use validate::{validate_grounding, validate_region, Violation};

/// Absolute tolerance, in seconds, for every time comparison.
pub const TIME_EPSILON: f64 = 1e-6;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_string())
            }
        }
    };
}

id_type!(UserId);
id_type!(ProjectId);
id_type!(TaskId);
id_type!(AssetId);
id_type!(RegionId);
id_type!(JudgmentId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub username: String,
    /// Salted digest of the login secret. Never leaves the store.
    #[serde(skip)]
    pub credential_hash: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Manager,
    Annotator,
    Reviewer,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Manager, Role::Annotator, Role::Reviewer];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Manager => "manager",
            Role::Annotator => "annotator",
            Role::Reviewer => "reviewer",
        })
    }
}

/// How tasks are handed out to annotators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStrategy {
    /// Every annotator gets every task.
    Shared,
    /// Tasks are partitioned round-robin.
    Disjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: ProjectId,
    pub name: String,
    pub ontology: Vec<String>,
    #[serde(default)]
    pub grounding_required: bool,
    pub members: BTreeMap<UserId, Role>,
    #[serde(default)]
    pub model_config_id: Option<String>,
    #[serde(default)]
    pub assignment_strategy: Option<AssignmentStrategy>,
}

impl Project {
    pub fn role_of(&self, user: &UserId) -> Option<Role> {
        self.members.get(user).copied()
    }

    pub fn members_with(&self, role: Role) -> Vec<UserId> {
        self.members
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(u, _)| u.clone())
            .collect()
    }

    /// Position of `label` in the ontology, if it belongs to it.
    pub fn ontology_index(&self, label: &str) -> Option<usize> {
        self.ontology.iter().position(|l| l == label)
    }

    /// Lowercase, dash-separated form of the name used as export path prefix.
    pub fn slug(&self) -> String {
        let mut slug = String::with_capacity(self.name.len());
        for c in self.name.chars() {
            if c.is_ascii_alphanumeric() {
                slug.push(c.to_ascii_lowercase());
            } else if !slug.ends_with('-') && !slug.is_empty() {
                slug.push('-');
            }
        }
        while slug.ends_with('-') {
            slug.pop();
        }
        if slug.is_empty() {
            slug.push_str("project");
        }
        slug
    }

    /// Structural checks that do not need any other entity.
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.name.trim().is_empty() {
            problems.push("project name is empty".to_string());
        }
        for (i, label) in self.ontology.iter().enumerate() {
            if label.trim().is_empty() {
                problems.push(format!("ontology[{i}] is empty"));
            } else if self.ontology[..i].contains(label) {
                problems.push(format!("ontology[{i}] duplicates \"{label}\""));
            }
        }
        if !self.members.values().any(|r| *r == Role::Manager) {
            problems.push("project has no manager".to_string());
        }
        problems
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Unstarted,
    InProgress,
    Submitted,
    Reviewed,
}

impl TaskStatus {
    /// Forward moves plus the single backward edge Reviewed -> InProgress.
    pub fn can_move_to(self, next: TaskStatus) -> bool {
        next > self || (self == TaskStatus::Reviewed && next == TaskStatus::InProgress)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub project_id: ProjectId,
    pub audio_asset_id: AssetId,
    /// Assignee to that assignee's progress on the task.
    pub assignees: BTreeMap<UserId, TaskStatus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioFormat {
    Wav,
    Mp3,
}

impl AudioFormat {
    pub fn from_filename(name: &str) -> Option<Self> {
        let ext = name.rsplit_once('.')?.1.to_ascii_lowercase();
        match ext.as_str() {
            "wav" => Some(AudioFormat::Wav),
            "mp3" => Some(AudioFormat::Mp3),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AudioFormat::Wav => "wav",
            AudioFormat::Mp3 => "mp3",
        }
    }
}

impl fmt::Display for AudioFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioAsset {
    pub id: AssetId,
    pub original_filename: String,
    pub format: AudioFormat,
    /// Absent when the duration is unknown (MP3).
    pub duration_s: Option<f64>,
    pub sample_rate_hz: Option<u32>,
    /// Hex SHA-256 of the stored bytes.
    pub digest: String,
    pub byte_length: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Human,
    Model,
    ModelEdited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionStatus {
    Draft,
    Submitted,
    Approved,
    Rejected,
}

impl RegionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionStatus::Draft => "draft",
            RegionStatus::Submitted => "submitted",
            RegionStatus::Approved => "approved",
            RegionStatus::Rejected => "rejected",
        }
    }
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Human => "human",
            Provenance::Model => "model",
            Provenance::ModelEdited => "model_edited",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub reviewer_id: UserId,
    pub verdict: Verdict,
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRegion {
    pub id: RegionId,
    pub task_id: TaskId,
    pub annotator_id: UserId,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub caption: Option<String>,
    pub provenance: Provenance,
    pub status: RegionStatus,
    #[serde(default)]
    pub review: Option<Review>,
    #[serde(default)]
    pub confidence: Option<f64>,
}

impl AnnotationRegion {
    pub fn has_caption(&self) -> bool {
        self.caption
            .as_deref()
            .is_some_and(|c| !c.trim().is_empty())
    }

    /// True when the annotation content (span, labels, caption) differs.
    pub fn content_differs(&self, other: &AnnotationRegion) -> bool {
        (self.start_s - other.start_s).abs() > TIME_EPSILON
            || (self.end_s - other.end_s).abs() > TIME_EPSILON
            || self.labels != other.labels
            || self.caption != other.caption
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceJudgment {
    pub id: JudgmentId,
    pub project_id: ProjectId,
    pub item_a: String,
    pub item_b: String,
    pub rater_id: UserId,
    pub winner: Side,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl PreferenceJudgment {
    pub fn winner_and_loser(&self) -> (&str, &str) {
        match self.winner {
            Side::A => (&self.item_a, &self.item_b),
            Side::B => (&self.item_b, &self.item_a),
        }
    }

    pub fn check(&self, project: &Project) -> Vec<String> {
        let mut problems = Vec::new();
        if self.item_a == self.item_b {
            problems.push("item_a and item_b must differ".to_string());
        }
        if project.role_of(&self.rater_id).is_none() {
            problems.push(format!("rater {} is not a project member", self.rater_id));
        }
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> AnnotationRegion {
        AnnotationRegion {
            id: "r1".into(),
            task_id: "t1".into(),
            annotator_id: "u1".into(),
            start_s: 0.25,
            end_s: 3.5,
            labels: vec!["speech".into()],
            caption: Some("a voice".into()),
            provenance: Provenance::ModelEdited,
            status: RegionStatus::Approved,
            review: Some(Review {
                reviewer_id: "u9".into(),
                verdict: Verdict::Approve,
                feedback: String::new(),
            }),
            confidence: Some(0.75),
        }
    }

    #[test]
    fn region_json_round_trip() {
        let r = region();
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"provenance\":\"model_edited\""));
        let back: AnnotationRegion = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn user_credentials_never_serialized() {
        let u = User {
            id: "u1".into(),
            username: "ana".into(),
            credential_hash: vec![1, 2, 3],
        };
        let text = serde_json::to_string(&u).unwrap();
        assert_eq!(text, r#"{"id":"u1","username":"ana"}"#);
    }

    #[test]
    fn slug_normalizes_name() {
        let mut members = BTreeMap::new();
        members.insert(UserId::from("u1"), Role::Manager);
        let p = Project {
            id: "p1".into(),
            name: "  Music Captions (v2)! ".into(),
            ontology: vec![],
            grounding_required: false,
            members,
            model_config_id: None,
            assignment_strategy: None,
        };
        assert_eq!(p.slug(), "music-captions-v2");
        assert!(p.check().is_empty());
    }

    #[test]
    fn task_status_edges() {
        use TaskStatus::*;
        assert!(Unstarted.can_move_to(InProgress));
        assert!(InProgress.can_move_to(Submitted));
        assert!(Submitted.can_move_to(Reviewed));
        assert!(Reviewed.can_move_to(InProgress));
        assert!(!Submitted.can_move_to(InProgress));
        assert!(!InProgress.can_move_to(Unstarted));
    }

    #[test]
    fn format_from_extension_is_case_insensitive() {
        assert_eq!(AudioFormat::from_filename("A.WAV"), Some(AudioFormat::Wav));
        assert_eq!(AudioFormat::from_filename("b.Mp3"), Some(AudioFormat::Mp3));
        assert_eq!(AudioFormat::from_filename("song.flac"), None);
        assert_eq!(AudioFormat::from_filename("noext"), None);
    }
}
