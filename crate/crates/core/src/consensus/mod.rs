//! Cross-annotator region matching, majority consensus and Fleiss' Kappa.

mod kappa;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::{
    AnnotationRegion, Provenance, RegionId, RegionStatus, Review, UserId, Verdict,
};

pub use kappa::{fleiss_kappa, AgreementReport, BadMatrix};

/// Default IoU threshold for matching regions across annotators.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Category used when a rater did not annotate a cluster.
pub const NONE_CATEGORY: &str = "none";
/// Category for a caption-only region (no ontology label).
pub const UNLABELED_CATEGORY: &str = "unlabeled";

/// Intersection over union of two `(start, end)` intervals.
pub fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn span(r: &AnnotationRegion) -> (f64, f64) {
    (r.start_s, r.end_s)
}

fn canonical_order(a: &AnnotationRegion, b: &AnnotationRegion) -> Ordering {
    a.start_s
        .total_cmp(&b.start_s)
        .then_with(|| a.annotator_id.cmp(&b.annotator_id))
        .then_with(|| a.end_s.total_cmp(&b.end_s))
        .then_with(|| a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionCluster {
    pub cluster_id: usize,
    /// At most one region per annotator; the first member is the seed.
    pub members: Vec<AnnotationRegion>,
    /// The seed (earliest) member's span.
    pub representative: (f64, f64),
}

impl RegionCluster {
    pub fn member_of(&self, annotator: &UserId) -> Option<&AnnotationRegion> {
        self.members.iter().find(|m| &m.annotator_id == annotator)
    }
}

/// Greedy seed-and-absorb clustering.
///
/// Regions are visited by (start, annotator, end, id). Each unassigned
/// region seeds a cluster that then absorbs, in the same order, every
/// unassigned region from a not-yet-represented annotator whose IoU with the
/// seed is at least `tau`.
pub fn cluster_regions(regions: &[AnnotationRegion], tau: f64) -> Vec<RegionCluster> {
    let mut sorted: Vec<&AnnotationRegion> = regions.iter().collect();
    sorted.sort_by(|a, b| canonical_order(a, b));
    let mut taken = vec![false; sorted.len()];
    let mut clusters = Vec::new();
    for seed_idx in 0..sorted.len() {
        if taken[seed_idx] {
            continue;
        }
        taken[seed_idx] = true;
        let seed = sorted[seed_idx];
        let mut members = vec![seed.clone()];
        for idx in seed_idx + 1..sorted.len() {
            let candidate = sorted[idx];
            if taken[idx]
                || members
                    .iter()
                    .any(|m| m.annotator_id == candidate.annotator_id)
            {
                continue;
            }
            if iou(span(seed), span(candidate)) >= tau {
                taken[idx] = true;
                members.push(candidate.clone());
            }
        }
        clusters.push(RegionCluster {
            cluster_id: clusters.len(),
            members,
            representative: span(seed),
        });
    }
    clusters
}

/// The category a member contributes to the agreement matrix: its first
/// label in ontology order.
pub fn member_category(region: &AnnotationRegion, ontology: &[String]) -> String {
    region
        .labels
        .iter()
        .min_by_key(|l| {
            (
                ontology.iter().position(|o| o == *l).unwrap_or(usize::MAX),
                (*l).clone(),
            )
        })
        .cloned()
        .unwrap_or_else(|| UNLABELED_CATEGORY.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementInput {
    pub categories: Vec<String>,
    pub counts: Vec<Vec<u32>>,
    pub raters: usize,
}

/// Tabulates one row per cluster over a fixed annotator roster; absent
/// annotators count as [`NONE_CATEGORY`].
pub fn build_agreement_input(
    clusters: &[RegionCluster],
    roster: &[UserId],
    ontology: &[String],
) -> AgreementInput {
    let per_row: Vec<Vec<String>> = clusters
        .iter()
        .map(|c| {
            roster
                .iter()
                .map(|u| {
                    c.member_of(u)
                        .map(|m| member_category(m, ontology))
                        .unwrap_or_else(|| NONE_CATEGORY.to_string())
                })
                .collect()
        })
        .collect();

    let rank = |c: &String| -> (usize, String) {
        let pos = if c == NONE_CATEGORY {
            usize::MAX
        } else if c == UNLABELED_CATEGORY {
            usize::MAX - 1
        } else {
            ontology
                .iter()
                .position(|o| o == c)
                .unwrap_or(usize::MAX - 2)
        };
        (pos, c.clone())
    };
    let mut categories: Vec<String> = per_row.iter().flatten().cloned().collect();
    categories.push(NONE_CATEGORY.to_string());
    categories.sort_by_key(&rank);
    categories.dedup();

    let counts = per_row
        .iter()
        .map(|row| {
            categories
                .iter()
                .map(|c| row.iter().filter(|x| *x == c).count() as u32)
                .collect()
        })
        .collect();
    AgreementInput {
        categories,
        counts,
        raters: roster.len(),
    }
}

/// Disagreement surfaced to reviewers instead of being resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisagreementNote {
    pub cluster_id: usize,
    pub span: (f64, f64),
    pub message: String,
    /// Per-annotator labels or captions, verbatim.
    pub entries: Vec<(UserId, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConsensusOutcome {
    pub regions: Vec<AnnotationRegion>,
    pub notes: Vec<DisagreementNote>,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Synthetic author of consensus regions.
pub fn consensus_annotator() -> UserId {
    UserId::from("consensus")
}

/// Majority policy over clusters produced by [`cluster_regions`].
///
/// A cluster survives when a strict majority of `raters` annotated it. Its
/// span is the per-endpoint median of the members, its labels those picked
/// by a strict majority of members, its caption the one shared by a strict
/// majority. Anything short of a majority is dropped and reported as a note.
pub fn consensus_regions(
    clusters: &[RegionCluster],
    raters: usize,
    ontology: &[String],
) -> ConsensusOutcome {
    let mut out = ConsensusOutcome::default();
    for cluster in clusters {
        let members = &cluster.members;
        if members.is_empty() || members.len() * 2 <= raters {
            continue;
        }
        let start = median(members.iter().map(|m| m.start_s).collect());
        let end = median(members.iter().map(|m| m.end_s).collect());

        let mut label_votes: BTreeMap<&str, usize> = BTreeMap::new();
        for m in members {
            let mut seen: Vec<&str> = m.labels.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for l in seen {
                *label_votes.entry(l).or_default() += 1;
            }
        }
        let mut labels: Vec<String> = label_votes
            .iter()
            .filter(|(_, votes)| **votes * 2 > members.len())
            .map(|(l, _)| l.to_string())
            .collect();
        labels.sort_by_key(|l| ontology.iter().position(|o| o == l).unwrap_or(usize::MAX));
        if label_votes.len() > labels.len() {
            out.notes.push(DisagreementNote {
                cluster_id: cluster.cluster_id,
                span: (start, end),
                message: "no strict majority for some labels".to_string(),
                entries: members
                    .iter()
                    .map(|m| (m.annotator_id.clone(), m.labels.join("|")))
                    .collect(),
            });
        }

        let captions: Vec<(&UserId, &str)> = members
            .iter()
            .filter(|m| m.has_caption())
            .map(|m| (&m.annotator_id, m.caption.as_deref().unwrap_or_default()))
            .collect();
        let mut caption = None;
        for (_, text) in &captions {
            if captions.iter().filter(|(_, t)| t == text).count() * 2 > members.len() {
                caption = Some(text.to_string());
                break;
            }
        }
        if caption.is_none() && !captions.is_empty() {
            out.notes.push(DisagreementNote {
                cluster_id: cluster.cluster_id,
                span: (start, end),
                message: "captions differ".to_string(),
                entries: captions
                    .iter()
                    .map(|(u, t)| ((*u).clone(), t.to_string()))
                    .collect(),
            });
        }
        if labels.is_empty() && caption.is_none() {
            continue;
        }

        let all_approved = members.iter().all(|m| m.status == RegionStatus::Approved);
        let provenance = if members.iter().all(|m| m.provenance == Provenance::Model) {
            Provenance::Model
        } else {
            Provenance::Human
        };
        let seed = &members[0];
        out.regions.push(AnnotationRegion {
            id: RegionId(format!("consensus-{}-{}", seed.task_id, cluster.cluster_id)),
            task_id: seed.task_id.clone(),
            annotator_id: consensus_annotator(),
            start_s: start,
            end_s: end,
            labels,
            caption,
            provenance,
            status: if all_approved {
                RegionStatus::Approved
            } else {
                RegionStatus::Submitted
            },
            review: all_approved.then(|| Review {
                reviewer_id: consensus_annotator(),
                verdict: Verdict::Approve,
                feedback: format!("majority of {} raters", members.len()),
            }),
            confidence: None,
        });
    }
    out
}
