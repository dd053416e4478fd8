use thiserror::Error;

use super::{AnnotationRegion, Provenance, RegionStatus, Review, UserId, Verdict};

/// Review-loop actions on a single region.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionAction {
    Submit,
    Approve {
        reviewer: UserId,
        feedback: Option<String>,
    },
    Reject {
        reviewer: UserId,
        feedback: String,
    },
    Reopen,
}

impl RegionAction {
    fn name(&self) -> &'static str {
        match self {
            RegionAction::Submit => "submit",
            RegionAction::Approve { .. } => "approve",
            RegionAction::Reject { .. } => "reject",
            RegionAction::Reopen => "reopen",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("illegal transition: cannot {action} a {from} region")]
    IllegalTransition {
        from: &'static str,
        action: &'static str,
    },
    #[error("rejection requires feedback")]
    MissingFeedback,
}

/// Applies one edge of the Draft -> Submitted -> {Approved, Rejected},
/// Rejected -> Draft state machine.
pub fn transition_status(
    region: &AnnotationRegion,
    action: RegionAction,
) -> Result<AnnotationRegion, TransitionError> {
    let illegal = TransitionError::IllegalTransition {
        from: region.status.as_str(),
        action: action.name(),
    };
    let mut next = region.clone();
    match (region.status, action) {
        (RegionStatus::Draft, RegionAction::Submit) => {
            next.status = RegionStatus::Submitted;
        }
        (RegionStatus::Submitted, RegionAction::Approve { reviewer, feedback }) => {
            next.status = RegionStatus::Approved;
            next.review = Some(Review {
                reviewer_id: reviewer,
                verdict: Verdict::Approve,
                feedback: feedback.unwrap_or_default(),
            });
        }
        (RegionStatus::Submitted, RegionAction::Reject { reviewer, feedback }) => {
            if feedback.trim().is_empty() {
                return Err(TransitionError::MissingFeedback);
            }
            next.status = RegionStatus::Rejected;
            next.review = Some(Review {
                reviewer_id: reviewer,
                verdict: Verdict::Reject,
                feedback,
            });
        }
        (RegionStatus::Rejected, RegionAction::Reopen) => {
            next.status = RegionStatus::Draft;
            next.review = None;
        }
        _ => return Err(illegal),
    }
    Ok(next)
}

/// Records that a human touched a model-produced region.
pub fn mark_edited(region: &AnnotationRegion) -> AnnotationRegion {
    let mut next = region.clone();
    if next.provenance == Provenance::Model {
        next.provenance = Provenance::ModelEdited;
    }
    next
}
