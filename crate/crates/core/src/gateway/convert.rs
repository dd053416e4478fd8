use crate::domain::{
    AnnotationRegion, AudioAsset, Project, Provenance, RegionId, RegionStatus, Task, UserId,
    TIME_EPSILON,
};

use super::Prediction;

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPrediction {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Conversion {
    pub regions: Vec<AnnotationRegion>,
    pub skipped: Vec<SkippedPrediction>,
}

/// Turns validated predictions into Draft regions owned by `annotator`.
///
/// Segment labels outside the ontology become the caption; text outputs
/// become a caption over the whole file. Segments are clipped to the asset
/// duration. Region ids are `staged-{index}` placeholders, replaced when the
/// regions are committed.
pub fn predictions_to_regions(
    predictions: &[Prediction],
    task: &Task,
    annotator: &UserId,
    project: &Project,
    asset: &AudioAsset,
) -> Conversion {
    let mut out = Conversion::default();
    for (index, p) in predictions.iter().enumerate() {
        let mut skip = |reason: &str| {
            out.skipped.push(SkippedPrediction {
                index,
                reason: reason.to_string(),
            })
        };
        let (start_s, end_s, labels, caption) = match p {
            Prediction::Segment {
                label, start, end, ..
            } => {
                let end = match asset.duration_s {
                    Some(d) => end.min(d),
                    None => *end,
                };
                if end - start <= TIME_EPSILON {
                    skip("segment starts beyond the end of the audio");
                    continue;
                }
                if project.ontology_index(label).is_some() {
                    (*start, end, vec![label.clone()], None)
                } else {
                    (*start, end, Vec::new(), Some(label.clone()))
                }
            }
            Prediction::Text { text, .. } => match asset.duration_s {
                Some(d) if d > TIME_EPSILON => (0.0, d, Vec::new(), Some(text.clone())),
                _ => {
                    skip("text output needs a known audio duration");
                    continue;
                }
            },
        };
        out.regions.push(AnnotationRegion {
            id: RegionId::new(format!("staged-{index}")),
            task_id: task.id.clone(),
            annotator_id: annotator.clone(),
            start_s,
            end_s,
            labels,
            caption,
            provenance: Provenance::Model,
            status: RegionStatus::Draft,
            review: None,
            confidence: p.confidence(),
        });
    }
    out
}
