//! Wire types for the model backend protocol. All bodies are JSON.
//!
//! | request | response |
//! |---|---|
//! | `GET /health` | `{"status":"ok","model":"<name>"}` |
//! | `POST /predict {"audio","format","filename"}` | `{"predictions":[...]}` |
//! | `POST /finetune {"epochs","learning_rate","examples"}` | `202 {"job_id"}` |
//! | `GET /finetune/{job_id}` | `{"status","metrics":{"loss","accuracy"}}` |
//! | `GET /weights` | binary, digest in [`WEIGHTS_DIGEST_HEADER`] |

use serde::{Deserialize, Serialize};

use super::config::{ModelBackendConfig, OutputType};
use crate::export::{CaptionRecord, RegionRecord};

/// Hex SHA-256 of the weights body.
pub const WEIGHTS_DIGEST_HEADER: &str = "x-content-sha256";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictRequest {
    /// Base64 (standard alphabet, padded) of the raw file bytes.
    pub audio: String,
    pub format: String,
    pub filename: String,
}

/// One backend output item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Prediction {
    Segment {
        label: String,
        start: f64,
        end: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        confidence: Option<f64>,
    },
    Text {
        label: String,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        confidence: Option<f64>,
    },
}

impl Prediction {
    pub fn output_type(&self) -> OutputType {
        match self {
            Prediction::Segment { .. } => OutputType::Segment,
            Prediction::Text { .. } => OutputType::Text,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Prediction::Segment { label, .. } | Prediction::Text { label, .. } => label,
        }
    }

    pub fn confidence(&self) -> Option<f64> {
        match self {
            Prediction::Segment { confidence, .. } | Prediction::Text { confidence, .. } => {
                *confidence
            }
        }
    }

    /// Structural checks; with a config, also that a matching output is
    /// declared (text outputs must match the declared label exactly).
    pub fn check(&self, config: Option<&ModelBackendConfig>) -> Result<(), String> {
        if self.label().trim().is_empty() {
            return Err("empty label".into());
        }
        if let Some(c) = self.confidence() {
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("confidence {c} outside [0, 1]"));
            }
        }
        match self {
            Prediction::Segment { start, end, .. } => {
                if !start.is_finite() || !end.is_finite() || *start < 0.0 || start >= end {
                    return Err(format!("invalid segment interval [{start}, {end}]"));
                }
            }
            Prediction::Text { text, .. } => {
                if text.trim().is_empty() {
                    return Err("empty text".into());
                }
            }
        }
        if let Some(config) = config {
            let declared = config.outputs.iter().any(|o| {
                o.output_type == self.output_type()
                    && (o.output_type == OutputType::Segment || o.label == self.label())
            });
            if !declared {
                return Err(format!(
                    "{} output {:?} not declared in output_schema",
                    self.output_type(),
                    self.label()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub predictions: Vec<Prediction>,
}

/// Training example sent to `/finetune`: an exported region or caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FinetuneExample {
    Region(RegionRecord),
    Caption(CaptionRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRequest {
    pub epochs: u32,
    pub learning_rate: f64,
    pub examples: Vec<FinetuneExample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneAccepted {
    pub job_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireMetrics {
    #[serde(default)]
    pub loss: Vec<f64>,
    #[serde(default)]
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneStatusResponse {
    pub status: String,
    #[serde(default)]
    pub metrics: WireMetrics,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_wire_shape() {
        let seg: Prediction = serde_json::from_str(
            r#"{"type":"segment","label":"s","start":0.5,"end":2.0,"confidence":0.9}"#,
        )
        .unwrap();
        assert_eq!(
            seg,
            Prediction::Segment {
                label: "s".into(),
                start: 0.5,
                end: 2.0,
                confidence: Some(0.9)
            }
        );
        let text = Prediction::Text {
            label: "Caption".into(),
            text: "hi".into(),
            confidence: None,
        };
        assert_eq!(
            serde_json::to_string(&text).unwrap(),
            r#"{"type":"text","label":"Caption","text":"hi"}"#
        );
    }

    #[test]
    fn structural_checks() {
        let bad = Prediction::Segment {
            label: "s".into(),
            start: 3.0,
            end: 1.0,
            confidence: None,
        };
        assert!(bad.check(None).is_err());
        let empty = Prediction::Text {
            label: "Caption".into(),
            text: " ".into(),
            confidence: None,
        };
        assert!(empty.check(None).is_err());
    }
}
