//! YAML model declarations.
//!
//! ```yaml
//! name: "music-flamingo"
//! image: "my-repo/music-flamingo:v1"
//! endpoint: "http://localhost:9000"
//! input_schema: { "audio": "wav" }
//! output_schema:
//!   - { "type": "text", "label": "Caption" }
//! resources: { "gpu": "true" }
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use thiserror::Error;

use crate::domain::AudioFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputType {
    Segment,
    Text,
}

impl fmt::Display for OutputType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputType::Segment => "segment",
            OutputType::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDecl {
    #[serde(rename = "type")]
    pub output_type: OutputType,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelBackendConfig {
    pub name: String,
    pub image: String,
    pub endpoint: String,
    pub input_format: AudioFormat,
    pub outputs: Vec<OutputDecl>,
    pub gpu: bool,
}

impl ModelBackendConfig {
    pub fn declares(&self, output_type: OutputType) -> bool {
        self.outputs.iter().any(|o| o.output_type == output_type)
    }

    /// Endpoint with any trailing slash removed, ready for path joins.
    pub fn base_url(&self) -> &str {
        self.endpoint.trim_end_matches('/')
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("YAML parse error: {0}")]
    Parse(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

const TOP_LEVEL_KEYS: [&str; 6] = [
    "name",
    "image",
    "endpoint",
    "input_schema",
    "output_schema",
    "resources",
];

fn as_mapping<'a>(value: &'a Value, path: &str) -> Result<&'a Mapping, ConfigError> {
    value
        .as_mapping()
        .ok_or_else(|| schema(path, "expected a mapping"))
}

fn string_field(map: &Mapping, key: &str, path: &str) -> Result<Option<String>, ConfigError> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(schema(path, "expected a string")),
    }
}

fn check_keys(map: &Mapping, allowed: &[&str], path: &str) -> Result<(), ConfigError> {
    for key in map.keys() {
        let Some(name) = key.as_str() else {
            return Err(schema(path, "keys must be strings"));
        };
        if !allowed.contains(&name) {
            let at = if path.is_empty() {
                name.to_string()
            } else {
                format!("{path}.{name}")
            };
            return Err(schema(at, "unknown key"));
        }
    }
    Ok(())
}

fn check_endpoint(endpoint: &str) -> Result<(), ConfigError> {
    let url = reqwest::Url::parse(endpoint)
        .map_err(|e| schema("endpoint", format!("not an absolute URL: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(schema("endpoint", "must be an http(s) URL with a host"));
    }
    Ok(())
}

fn check_image(image: &str) -> Result<(), ConfigError> {
    if image.is_empty() || image.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(schema("image", "not a container image reference"));
    }
    Ok(())
}

/// `my-repo/music-flamingo:v1` -> `music-flamingo`
fn name_from_image(image: &str) -> String {
    let without_digest = image.split('@').next().unwrap_or(image);
    let last = without_digest.rsplit('/').next().unwrap_or(without_digest);
    last.split(':').next().unwrap_or(last).to_string()
}

/// Parses and validates a backend declaration.
///
/// `name` defaults to the image's repository name and `resources.gpu` to
/// false; every other key is required. Unknown keys are rejected.
pub fn parse_config(yaml_text: &str) -> Result<ModelBackendConfig, ConfigError> {
    let doc: Value =
        serde_yaml::from_str(yaml_text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let top = as_mapping(&doc, "$")?;
    check_keys(top, &TOP_LEVEL_KEYS, "")?;

    let image = string_field(top, "image", "image")?
        .ok_or_else(|| schema("image", "missing required key"))?;
    check_image(&image)?;
    let endpoint = string_field(top, "endpoint", "endpoint")?
        .ok_or_else(|| schema("endpoint", "missing required key"))?;
    check_endpoint(&endpoint)?;
    let name = match string_field(top, "name", "name")? {
        Some(n) if n.trim().is_empty() => return Err(schema("name", "must not be empty")),
        Some(n) => n,
        None => name_from_image(&image),
    };

    let input = top
        .get("input_schema")
        .ok_or_else(|| schema("input_schema", "missing required key"))?;
    let input = as_mapping(input, "input_schema")?;
    check_keys(input, &["audio"], "input_schema")?;
    let input_format = match string_field(input, "audio", "input_schema.audio")?.as_deref() {
        Some("wav") => AudioFormat::Wav,
        Some("mp3") => AudioFormat::Mp3,
        Some(other) => {
            return Err(schema(
                "input_schema.audio",
                format!("unsupported audio type {other:?}"),
            ))
        }
        None => return Err(schema("input_schema.audio", "missing required key")),
    };

    let outputs_value = top
        .get("output_schema")
        .ok_or_else(|| schema("output_schema", "missing required key"))?;
    let Some(entries) = outputs_value.as_sequence() else {
        return Err(schema("output_schema", "expected a list"));
    };
    if entries.is_empty() {
        return Err(schema("output_schema", "must declare at least one output"));
    }
    let mut outputs = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let path = format!("output_schema[{i}]");
        let map = as_mapping(entry, &path)?;
        check_keys(map, &["type", "label"], &path)?;
        let output_type = match string_field(map, "type", &format!("{path}.type"))?.as_deref() {
            Some("segment") => OutputType::Segment,
            Some("text") => OutputType::Text,
            Some(other) => {
                return Err(schema(
                    format!("{path}.type"),
                    format!("{other:?} is not one of segment, text"),
                ))
            }
            None => return Err(schema(format!("{path}.type"), "missing required key")),
        };
        let label = string_field(map, "label", &format!("{path}.label"))?
            .filter(|l| !l.trim().is_empty())
            .ok_or_else(|| schema(format!("{path}.label"), "missing or empty label"))?;
        outputs.push(OutputDecl { output_type, label });
    }

    let gpu = match top.get("resources") {
        None | Some(Value::Null) => false,
        Some(value) => {
            let map = as_mapping(value, "resources")?;
            check_keys(map, &["gpu"], "resources")?;
            match map.get("gpu") {
                None => false,
                Some(Value::Bool(b)) => *b,
                Some(Value::String(s)) if s == "true" => true,
                Some(Value::String(s)) if s == "false" => false,
                Some(_) => return Err(schema("resources.gpu", "expected \"true\" or \"false\"")),
            }
        }
    };

    Ok(ModelBackendConfig {
        name,
        image,
        endpoint,
        input_format,
        outputs,
        gpu,
    })
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// Canonical YAML form; `parse_config(&serialize_config(c)) == c`.
pub fn serialize_config(config: &ModelBackendConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("name: {}\n", quoted(&config.name)));
    out.push_str(&format!("image: {}\n", quoted(&config.image)));
    out.push_str(&format!("endpoint: {}\n", quoted(&config.endpoint)));
    out.push_str(&format!(
        "input_schema: {{ \"audio\": \"{}\" }}\n",
        config.input_format.as_str()
    ));
    out.push_str("output_schema:\n");
    for o in &config.outputs {
        out.push_str(&format!(
            "  - {{ \"type\": \"{}\", \"label\": {} }}\n",
            o.output_type,
            quoted(&o.label)
        ));
    }
    out.push_str(&format!("resources: {{ \"gpu\": \"{}\" }}\n", config.gpu));
    out
}
