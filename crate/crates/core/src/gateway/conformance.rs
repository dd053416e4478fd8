use std::time::Duration;

use base64::Engine;
use serde::Serialize;

use super::{HealthResponse, Prediction};
use crate::storage::wav::silence_wav;

/// Check names, in the order they run.
pub const CONFORMANCE_CHECKS: [&str; 5] = [
    "health responds ok",
    "predict accepts audio",
    "response is structured document",
    "predictions are well-formed",
    "malformed request rejected",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub endpoint: String,
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One `PASS name` / `FAIL name: detail` line per check.
    pub fn render(&self) -> String {
        let mut out = format!("conformance probe against {}\n", self.endpoint);
        for c in &self.checks {
            if c.passed {
                out.push_str(&format!("PASS {}\n", c.name));
            } else {
                out.push_str(&format!("FAIL {}: {}\n", c.name, c.detail));
            }
        }
        out
    }
}

struct Recorder(Vec<CheckResult>);

impl Recorder {
    fn record(&mut self, index: usize, outcome: Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.0.push(CheckResult {
            name: CONFORMANCE_CHECKS[index].to_string(),
            passed,
            detail,
        });
    }
}

/// Exercises a backend's health and predict endpoints. Never fails;
/// problems become failed checks in the report.
pub async fn conformance_probe(endpoint: &str, timeout: Duration) -> ConformanceReport {
    let base = endpoint.trim_end_matches('/').to_string();
    let http = reqwest::Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client");
    let mut rec = Recorder(Vec::new());

    let health = async {
        let r = http
            .get(format!("{base}/health"))
            .send()
            .await
            .map_err(|e| e.to_string())?;
        let status = r.status();
        let body = r.bytes().await.map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("status {status}"));
        }
        let h: HealthResponse = serde_json::from_slice(&body).map_err(|e| format!("body: {e}"))?;
        if h.status != "ok" {
            return Err(format!("status field {:?}", h.status));
        }
        Ok(format!("model {:?}", h.model))
    }
    .await;
    rec.record(0, health);

    let fixture = silence_wav(16000, 0.1);
    let request = serde_json::json!({
        "audio": base64::engine::general_purpose::STANDARD.encode(&fixture),
        "format": "wav",
        "filename": "conformance-silence.wav",
    });
    let response = async {
        let r = http
            .post(format!("{base}/predict"))
            .json(&request)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        let status = r.status();
        let body = r.bytes().await.map_err(|e| e.to_string())?;
        Ok::<_, String>((status, body))
    }
    .await;

    match response {
        Err(e) => {
            for i in 1..=3 {
                rec.record(i, Err(format!("no response: {e}")));
            }
        }
        Ok((status, body)) => {
            rec.record(
                1,
                if status.is_success() {
                    Ok(format!("status {status}"))
                } else {
                    Err(format!("status {status}"))
                },
            );
            let doc = serde_json::from_slice::<serde_json::Value>(&body)
                .map_err(|e| format!("not a JSON document: {e}"))
                .and_then(|v| match v.get("predictions") {
                    Some(serde_json::Value::Array(items)) => Ok(items.clone()),
                    _ => Err("missing predictions array".to_string()),
                });
            match doc {
                Err(e) => {
                    rec.record(2, Err(e.clone()));
                    rec.record(3, Err("no predictions to check".into()));
                }
                Ok(items) => {
                    rec.record(2, Ok(format!("{} predictions", items.len())));
                    let well_formed = items.iter().enumerate().try_for_each(|(i, item)| {
                        let p: Prediction = serde_json::from_value(item.clone())
                            .map_err(|e| format!("predictions[{i}]: {e}"))?;
                        p.check(None).map_err(|e| format!("predictions[{i}]: {e}"))
                    });
                    rec.record(3, well_formed.map(|_| "all items valid".to_string()));
                }
            }
        }
    }

    let malformed = async {
        let r = http
            .post(format!("{base}/predict"))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body("{\"audio\": 17, \"format\": \"wav\"")
            .send()
            .await
            .map_err(|e| e.to_string())?;
        let status = r.status();
        if status.is_client_error() {
            Ok(format!("status {status}"))
        } else {
            Err(format!("expected a 4xx status, got {status}"))
        }
    }
    .await;
    rec.record(4, malformed);

    ConformanceReport {
        endpoint: base,
        checks: rec.0,
    }
}
