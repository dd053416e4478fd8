//! Dataset export records and their byte-exact JSONL / CSV encodings.
//!
//! Ordering and number formatting are fixed so that exporting unchanged
//! data twice yields identical bytes.

use serde::{Deserialize, Serialize};

use crate::domain::{Provenance, RegionStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

impl ExportFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            ExportFormat::Jsonl => "application/x-ndjson",
            ExportFormat::Csv => "text/csv",
        }
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(format!("unknown export format {other:?}")),
        }
    }
}

/// An aligned (audio, caption) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub audio_path: String,
    pub text_caption: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub audio_path: String,
    pub start: f64,
    pub end: f64,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_id: Option<String>,
    pub status: RegionStatus,
    pub provenance: Provenance,
}

/// Seconds rendered the way the JSON encoder renders them (`4.0`, `9.5`).
pub fn format_seconds(value: f64) -> String {
    serde_json::to_string(&value).expect("finite seconds")
}

pub fn sort_captions(records: &mut [CaptionRecord]) {
    records.sort_by(|a, b| {
        a.audio_path
            .cmp(&b.audio_path)
            .then_with(|| a.start.total_cmp(&b.start))
            .then_with(|| a.end.total_cmp(&b.end))
            .then_with(|| a.text_caption.cmp(&b.text_caption))
    });
}

pub fn sort_regions(records: &mut [RegionRecord]) {
    records.sort_by(|a, b| {
        a.audio_path
            .cmp(&b.audio_path)
            .then_with(|| a.start.total_cmp(&b.start))
            .then_with(|| a.end.total_cmp(&b.end))
            .then_with(|| a.annotator_id.cmp(&b.annotator_id))
            .then_with(|| a.labels.cmp(&b.labels))
            .then_with(|| status_rank(a.status).cmp(&status_rank(b.status)))
    });
}

fn status_rank(s: RegionStatus) -> u8 {
    match s {
        RegionStatus::Draft => 0,
        RegionStatus::Submitted => 1,
        RegionStatus::Approved => 2,
        RegionStatus::Rejected => 3,
    }
}

fn jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn csv_document(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

/// Sorts and encodes caption records.
pub fn captions_document(mut records: Vec<CaptionRecord>, format: ExportFormat) -> String {
    sort_captions(&mut records);
    match format {
        ExportFormat::Jsonl => jsonl(&records),
        ExportFormat::Csv => csv_document(
            &["audio_path", "text_caption", "start", "end"],
            records.into_iter().map(|r| {
                vec![
                    r.audio_path,
                    r.text_caption,
                    format_seconds(r.start),
                    format_seconds(r.end),
                ]
            }),
        ),
    }
}

/// Sorts and encodes region records. `with_annotator` selects the raw
/// column set; consensus exports omit the annotator column.
pub fn regions_document(
    mut records: Vec<RegionRecord>,
    format: ExportFormat,
    with_annotator: bool,
) -> String {
    sort_regions(&mut records);
    if !with_annotator {
        for r in &mut records {
            r.annotator_id = None;
        }
    }
    match format {
        ExportFormat::Jsonl => jsonl(&records),
        ExportFormat::Csv => {
            let mut header = vec!["audio_path", "start", "end", "labels"];
            if with_annotator {
                header.push("annotator_id");
            }
            header.extend(["status", "provenance"]);
            csv_document(
                &header,
                records.into_iter().map(move |r| {
                    let mut row = vec![
                        r.audio_path,
                        format_seconds(r.start),
                        format_seconds(r.end),
                        r.labels.join("|"),
                    ];
                    if with_annotator {
                        row.push(r.annotator_id.unwrap_or_default());
                    }
                    row.push(r.status.as_str().to_string());
                    row.push(r.provenance.as_str().to_string());
                    row
                }),
            )
        }
    }
}
