//! Durable persistence: entity store, content-addressed audio blobs, WAV
//! header parsing and project snapshots.

mod snapshot;
mod store;
pub mod wav;

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AssetId, AudioAsset, AudioFormat, ProjectId};
use crate::gateway::FinetuneJob;

pub use snapshot::{
    export_snapshot, import_snapshot, ImportOutcome, SnapshotArchive, SnapshotError,
};
pub use store::{
    Entity, EntityKind, RegionFilter, Store, Tables, TaskFilter, Transaction, Versioned,
};
pub use wav::{parse_wav_header, MalformedWavHeader, WavHeaderInfo};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind:?} {key} not found")]
    NotFound { kind: EntityKind, key: String },
    #[error("{kind:?} {key} already exists")]
    AlreadyExists { kind: EntityKind, key: String },
    #[error(
        "conflicting write on {kind:?} {key}: base version {expected}, stored version {actual}"
    )]
    ConflictingWrite {
        kind: EntityKind,
        key: String,
        expected: u64,
        actual: u64,
    },
    #[error("data directory {0} is locked by another instance")]
    DataDirLocked(PathBuf),
    #[error("store is corrupt: {0}")]
    Corrupt(String),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    MalformedWavHeader(#[from] MalformedWavHeader),
    #[error("empty file")]
    EmptyFile,
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// A model backend attached to a project, plus the last fine-tune state
/// polled from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAttachment {
    pub id: String,
    pub project_id: ProjectId,
    /// The YAML document exactly as uploaded.
    pub yaml: String,
    #[serde(default)]
    pub last_job: Option<FinetuneJob>,
    #[serde(default)]
    pub job_epochs: Option<u32>,
    #[serde(default)]
    pub weights_digest: Option<String>,
}

/// Result of [`Store::ingest_audio`].
#[derive(Debug, Clone)]
pub struct Ingested {
    pub asset: AudioAsset,
    /// False when identical bytes were already stored.
    pub created: bool,
}

impl Store {
    /// Stores an uploaded WAV or MP3 file, content-addressed by SHA-256.
    pub fn ingest_audio(&self, bytes: &[u8], filename: &str) -> Result<Ingested, StoreError> {
        let format = AudioFormat::from_filename(filename)
            .ok_or_else(|| StoreError::UnsupportedFormat(filename.to_string()))?;
        if bytes.is_empty() {
            return Err(StoreError::EmptyFile);
        }
        let (duration_s, sample_rate_hz) = match format {
            AudioFormat::Wav => {
                let info = parse_wav_header(bytes)?;
                (Some(info.duration_s()), Some(info.sample_rate_hz))
            }
            AudioFormat::Mp3 => (None, None),
        };
        let digest = self.write_blob(bytes)?;
        self.transaction(|tx| {
            if let Some(existing) = tx.values::<AudioAsset>().find(|a| a.digest == digest) {
                return Ok(Ingested {
                    asset: existing.clone(),
                    created: false,
                });
            }
            let asset = AudioAsset {
                id: AssetId(tx.next_id("asset")),
                original_filename: filename.to_string(),
                format,
                duration_s,
                sample_rate_hz,
                digest: digest.clone(),
                byte_length: bytes.len() as u64,
            };
            tx.insert(asset.clone())?;
            Ok(Ingested {
                asset,
                created: true,
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_wav_reads_header() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let bytes = wav::encode_pcm16_mono(44_100, &vec![0; 44_100]);
        let got = store.ingest_audio(&bytes, "Tone.WAV").unwrap();
        assert!(got.created);
        assert_eq!(got.asset.duration_s, Some(1.0));
        assert_eq!(got.asset.sample_rate_hz, Some(44_100));
        assert_eq!(got.asset.byte_length, bytes.len() as u64);
        assert_eq!(store.read_blob(&got.asset.digest).unwrap(), bytes);
    }

    #[test]
    fn identical_bytes_dedupe() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let bytes = wav::silence_wav(8_000, 0.5);
        let first = store.ingest_audio(&bytes, "a.wav").unwrap();
        let size = store.list::<AudioAsset>(|_| true).len();
        let second = store.ingest_audio(&bytes, "b.wav").unwrap();
        assert!(!second.created);
        assert_eq!(first.asset.id, second.asset.id);
        assert_eq!(store.list::<AudioAsset>(|_| true).len(), size);
    }

    #[test]
    fn ingest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(
            store.ingest_audio(b"fLaC", "song.flac"),
            Err(StoreError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            store.ingest_audio(b"", "x.wav"),
            Err(StoreError::EmptyFile)
        ));
        assert!(matches!(
            store.ingest_audio(b"not a wav file", "x.wav"),
            Err(StoreError::MalformedWavHeader(_))
        ));
        let mp3 = store.ingest_audio(b"ID3\x04fake", "clip.mp3").unwrap();
        assert_eq!(mp3.asset.duration_s, None);
        assert_eq!(mp3.asset.format, AudioFormat::Mp3);
    }
}
