use std::fmt;

use serde::Serialize;

use super::{AnnotationRegion, AudioAsset, Project, Provenance, RegionStatus, TIME_EPSILON};

/// One broken invariant of an annotation region.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Violation {
    NonFiniteTime,
    NegativeStart,
    EmptyInterval,
    EndExceedsDuration { end_s: f64, duration_s: f64 },
    LabelNotInOntology { label: String },
    NoContent,
    ReviewMismatch,
    HumanWithConfidence,
    ConfidenceOutOfRange { confidence: f64 },
    UngroundedCaption { region_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFiniteTime => f.write_str("start_s and end_s must be finite"),
            Violation::NegativeStart => f.write_str("start_s must be >= 0"),
            Violation::EmptyInterval => f.write_str("start_s < end_s"),
            Violation::EndExceedsDuration { end_s, duration_s } => {
                write!(f, "end exceeds duration ({end_s} > {duration_s})")
            }
            Violation::LabelNotInOntology { label } => {
                write!(f, "label \"{label}\" is not in the project ontology")
            }
            Violation::NoContent => f.write_str("labels and caption are both empty"),
            Violation::ReviewMismatch => {
                f.write_str("review must be present exactly when status is approved or rejected")
            }
            Violation::HumanWithConfidence => f.write_str("human regions carry no confidence"),
            Violation::ConfidenceOutOfRange { confidence } => {
                write!(f, "confidence {confidence} outside [0, 1]")
            }
            Violation::UngroundedCaption { region_id } => {
                write!(f, "ungrounded full-span caption on region {region_id}")
            }
        }
    }
}

/// Returns every invariant the region breaks; an empty list means valid.
pub fn validate_region(
    region: &AnnotationRegion,
    project: &Project,
    asset: &AudioAsset,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if !region.start_s.is_finite() || !region.end_s.is_finite() {
        out.push(Violation::NonFiniteTime);
    } else {
        if region.start_s < 0.0 {
            out.push(Violation::NegativeStart);
        }
        if region.end_s - region.start_s <= TIME_EPSILON {
            out.push(Violation::EmptyInterval);
        }
        if let Some(duration) = asset.duration_s {
            if region.end_s > duration + TIME_EPSILON {
                out.push(Violation::EndExceedsDuration {
                    end_s: region.end_s,
                    duration_s: duration,
                });
            }
        }
    }
    for label in &region.labels {
        if project.ontology_index(label).is_none() {
            out.push(Violation::LabelNotInOntology {
                label: label.clone(),
            });
        }
    }
    if region.labels.is_empty() && !region.has_caption() {
        out.push(Violation::NoContent);
    }
    let reviewed = matches!(
        region.status,
        RegionStatus::Approved | RegionStatus::Rejected
    );
    if reviewed != region.review.is_some() {
        out.push(Violation::ReviewMismatch);
    }
    if let Some(confidence) = region.confidence {
        if region.provenance == Provenance::Human {
            out.push(Violation::HumanWithConfidence);
        }
        if !(0.0..=1.0).contains(&confidence) {
            out.push(Violation::ConfidenceOutOfRange { confidence });
        }
    }
    out
}

/// Timestamp-required mode: captions must be tied to a sub-interval of the
/// file, so a caption spanning the whole known duration is rejected.
pub fn validate_grounding(
    regions: &[AnnotationRegion],
    project: &Project,
    duration_s: Option<f64>,
) -> Vec<Violation> {
    if !project.grounding_required {
        return Vec::new();
    }
    let Some(duration) = duration_s else {
        return Vec::new();
    };
    regions
        .iter()
        .filter(|r| r.has_caption())
        .filter(|r| r.start_s.abs() <= TIME_EPSILON && (r.end_s - duration).abs() <= TIME_EPSILON)
        .map(|r| Violation::UngroundedCaption {
            region_id: r.id.to_string(),
        })
        .collect()
}
