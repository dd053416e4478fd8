use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use super::{ModelAttachment, StoreError};
use crate::domain::{
    AnnotationRegion, AudioAsset, PreferenceJudgment, Project, RegionStatus, Task, User, UserId,
};

const LOG_FILE: &str = "store.log";
const SNAPSHOT_FILE: &str = "store.snapshot.json";
const LOCK_FILE: &str = "LOCK";
pub(crate) const AUDIO_DIR: &str = "audio";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub version: u64,
    pub value: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    User,
    Project,
    Task,
    Asset,
    Region,
    Judgment,
    Model,
}

/// On-disk form of a user; the only place the credential hash is written.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct UserRecord {
    id: UserId,
    username: String,
    credential_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
enum Record {
    User(UserRecord),
    Project(Project),
    Task(Task),
    Asset(AudioAsset),
    Region(AnnotationRegion),
    Judgment(PreferenceJudgment),
    Model(ModelAttachment),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum WalOp {
    Put { version: u64, record: Record },
    Delete { kind: EntityKind, key: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct WalEntry {
    next_seq: u64,
    ops: Vec<WalOp>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct Tables {
    next_seq: u64,
    users: BTreeMap<String, Versioned<User>>,
    projects: BTreeMap<String, Versioned<Project>>,
    tasks: BTreeMap<String, Versioned<Task>>,
    assets: BTreeMap<String, Versioned<AudioAsset>>,
    regions: BTreeMap<String, Versioned<AnnotationRegion>>,
    judgments: BTreeMap<String, Versioned<PreferenceJudgment>>,
    models: BTreeMap<String, Versioned<ModelAttachment>>,
}

/// Snapshot-file form of [`Tables`]; users keep their credentials here.
#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    next_seq: u64,
    records: Vec<(u64, Record)>,
}

/// A persisted entity type.
pub trait Entity: Clone + Serialize + DeserializeOwned + Send + Sync + 'static {
    const KIND: EntityKind;
    fn key(&self) -> String;
    fn table(tables: &Tables) -> &BTreeMap<String, Versioned<Self>>;
    fn table_mut(tables: &mut Tables) -> &mut BTreeMap<String, Versioned<Self>>;
    #[doc(hidden)]
    fn to_record(&self) -> RecordBox;
}

/// Opaque wrapper so the record enum stays private.
#[doc(hidden)]
pub struct RecordBox(Record);

macro_rules! entity {
    ($ty:ty, $kind:ident, $field:ident, |$v:ident| $key:expr, $record:expr) => {
        impl Entity for $ty {
            const KIND: EntityKind = EntityKind::$kind;
            fn key(&self) -> String {
                let $v = self;
                $key
            }
            fn table(tables: &Tables) -> &BTreeMap<String, Versioned<Self>> {
                &tables.$field
            }
            fn table_mut(tables: &mut Tables) -> &mut BTreeMap<String, Versioned<Self>> {
                &mut tables.$field
            }
            fn to_record(&self) -> RecordBox {
                let f: fn(&$ty) -> Record = $record;
                RecordBox(f(self))
            }
        }
    };
}

entity!(User, User, users, |v| v.id.to_string(), |u| Record::User(
    UserRecord {
        id: u.id.clone(),
        username: u.username.clone(),
        credential_hash: hex::encode(&u.credential_hash),
    }
));
entity!(Project, Project, projects, |v| v.id.to_string(), |v| {
    Record::Project(v.clone())
});
entity!(Task, Task, tasks, |v| v.id.to_string(), |v| Record::Task(
    v.clone()
));
entity!(AudioAsset, Asset, assets, |v| v.id.to_string(), |v| {
    Record::Asset(v.clone())
});
entity!(
    AnnotationRegion,
    Region,
    regions,
    |v| v.id.to_string(),
    |v| Record::Region(v.clone())
);
entity!(
    PreferenceJudgment,
    Judgment,
    judgments,
    |v| v.id.to_string(),
    |v| Record::Judgment(v.clone())
);
entity!(ModelAttachment, Model, models, |v| v.id.clone(), |v| {
    Record::Model(v.clone())
});

impl Tables {
    pub fn get<E: Entity>(&self, key: &str) -> Option<&Versioned<E>> {
        E::table(self).get(key)
    }

    /// Entities of one kind in key order.
    pub fn values<E: Entity>(&self) -> impl Iterator<Item = &Versioned<E>> {
        E::table(self).values()
    }

    fn apply_put(&mut self, version: u64, record: Record) -> Result<(), StoreError> {
        fn put<E: Entity>(t: &mut Tables, version: u64, value: E) {
            E::table_mut(t).insert(value.key(), Versioned { version, value });
        }
        match record {
            Record::User(u) => {
                let credential_hash = hex::decode(&u.credential_hash)
                    .map_err(|e| StoreError::Corrupt(format!("user {}: {e}", u.id)))?;
                put(
                    self,
                    version,
                    User {
                        id: u.id,
                        username: u.username,
                        credential_hash,
                    },
                )
            }
            Record::Project(v) => put(self, version, v),
            Record::Task(v) => put(self, version, v),
            Record::Asset(v) => put(self, version, v),
            Record::Region(v) => put(self, version, v),
            Record::Judgment(v) => put(self, version, v),
            Record::Model(v) => put(self, version, v),
        }
        Ok(())
    }

    fn apply_delete(&mut self, kind: EntityKind, key: &str) {
        match kind {
            EntityKind::User => drop(self.users.remove(key)),
            EntityKind::Project => drop(self.projects.remove(key)),
            EntityKind::Task => drop(self.tasks.remove(key)),
            EntityKind::Asset => drop(self.assets.remove(key)),
            EntityKind::Region => drop(self.regions.remove(key)),
            EntityKind::Judgment => drop(self.judgments.remove(key)),
            EntityKind::Model => drop(self.models.remove(key)),
        }
    }

    fn apply(&mut self, entry: WalEntry) -> Result<(), StoreError> {
        self.next_seq = self.next_seq.max(entry.next_seq);
        for op in entry.ops {
            match op {
                WalOp::Put { version, record } => self.apply_put(version, record)?,
                WalOp::Delete { kind, key } => self.apply_delete(kind, &key),
            }
        }
        Ok(())
    }

    fn all_records(&self) -> Vec<(u64, Record)> {
        fn push<E: Entity>(t: &Tables, out: &mut Vec<(u64, Record)>) {
            for v in E::table(t).values() {
                out.push((v.version, v.value.to_record().0));
            }
        }
        let mut out = Vec::new();
        push::<User>(self, &mut out);
        push::<Project>(self, &mut out);
        push::<Task>(self, &mut out);
        push::<AudioAsset>(self, &mut out);
        push::<AnnotationRegion>(self, &mut out);
        push::<PreferenceJudgment>(self, &mut out);
        push::<ModelAttachment>(self, &mut out);
        out
    }
}

enum Undo {
    Restore {
        kind: EntityKind,
        key: String,
        previous: Option<(u64, Record)>,
    },
}

/// A batch of reads and writes applied atomically.
///
/// Writes go straight into the live tables while the store's write lock is
/// held; an undo log restores them if the closure fails or the log write
/// does not reach disk.
pub struct Transaction<'a> {
    tables: &'a mut Tables,
    ops: Vec<WalOp>,
    undo: Vec<Undo>,
    start_seq: u64,
}

impl Transaction<'_> {
    pub fn get<E: Entity>(&self, key: &str) -> Option<&Versioned<E>> {
        E::table(self.tables).get(key)
    }

    pub fn require<E: Entity>(&self, key: &str) -> Result<&Versioned<E>, StoreError> {
        self.get::<E>(key).ok_or_else(|| StoreError::NotFound {
            kind: E::KIND,
            key: key.to_string(),
        })
    }

    pub fn values<E: Entity>(&self) -> impl Iterator<Item = &E> {
        E::table(self.tables).values().map(|v| &v.value)
    }

    /// Fresh identifier `{prefix}-{seq}`; zero padding keeps lexical order
    /// equal to creation order.
    pub fn next_id(&mut self, prefix: &str) -> String {
        self.tables.next_seq += 1;
        format!("{prefix}-{:08}", self.tables.next_seq)
    }

    fn write<E: Entity>(&mut self, value: E, version: u64) -> u64 {
        let key = value.key();
        let previous = E::table(self.tables)
            .get(&key)
            .map(|v| (v.version, v.value.to_record().0));
        self.undo.push(Undo::Restore {
            kind: E::KIND,
            key: key.clone(),
            previous,
        });
        self.ops.push(WalOp::Put {
            version,
            record: value.to_record().0,
        });
        E::table_mut(self.tables).insert(key, Versioned { version, value });
        version
    }

    pub fn insert<E: Entity>(&mut self, value: E) -> Result<u64, StoreError> {
        let key = value.key();
        if E::table(self.tables).contains_key(&key) {
            return Err(StoreError::AlreadyExists { kind: E::KIND, key });
        }
        Ok(self.write(value, 1))
    }

    /// Optimistic update: fails unless the stored version equals `base_version`.
    pub fn update<E: Entity>(&mut self, value: E, base_version: u64) -> Result<u64, StoreError> {
        let key = value.key();
        let current = self.require::<E>(&key)?.version;
        if current != base_version {
            return Err(StoreError::ConflictingWrite {
                kind: E::KIND,
                key,
                expected: base_version,
                actual: current,
            });
        }
        Ok(self.write(value, current + 1))
    }

    /// Unconditional upsert.
    pub fn put<E: Entity>(&mut self, value: E) -> u64 {
        let version = E::table(self.tables)
            .get(&value.key())
            .map_or(1, |v| v.version + 1);
        self.write(value, version)
    }

    pub fn delete<E: Entity>(&mut self, key: &str) -> Result<(), StoreError> {
        let removed =
            E::table_mut(self.tables)
                .remove(key)
                .ok_or_else(|| StoreError::NotFound {
                    kind: E::KIND,
                    key: key.to_string(),
                })?;
        self.undo.push(Undo::Restore {
            kind: E::KIND,
            key: key.to_string(),
            previous: Some((removed.version, removed.value.to_record().0)),
        });
        self.ops.push(WalOp::Delete {
            kind: E::KIND,
            key: key.to_string(),
        });
        Ok(())
    }

    fn rollback(self) {
        let Transaction {
            tables,
            undo,
            start_seq,
            ..
        } = self;
        for Undo::Restore {
            kind,
            key,
            previous,
        } in undo.into_iter().rev()
        {
            tables.apply_delete(kind, &key);
            if let Some((version, record)) = previous {
                // records came out of the tables, so they always re-apply
                let _ = tables.apply_put(version, record);
            }
        }
        tables.next_seq = start_seq;
    }
}

#[derive(Debug, Default, Clone)]
pub struct TaskFilter {
    pub project: Option<String>,
    pub assignee: Option<UserId>,
}

#[derive(Debug, Default, Clone)]
pub struct RegionFilter {
    pub project: Option<String>,
    pub task: Option<String>,
    pub annotator: Option<UserId>,
    pub status: Option<RegionStatus>,
}

/// Durable single-node entity store.
///
/// Every committed transaction is one JSON line in an append-only log,
/// fsynced before the commit returns. A torn final line left by a crash is
/// discarded on open.
pub struct Store {
    dir: PathBuf,
    tables: RwLock<Tables>,
    log: Mutex<File>,
    _lock: File,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(AUDIO_DIR))?;

        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK_FILE))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::DataDirLocked(dir)),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }

        let mut tables = Tables::default();
        let snapshot_path = dir.join(SNAPSHOT_FILE);
        if snapshot_path.exists() {
            let snap: SnapshotFile = serde_json::from_slice(&fs::read(&snapshot_path)?)
                .map_err(|e| StoreError::Corrupt(format!("snapshot: {e}")))?;
            tables.next_seq = snap.next_seq;
            for (version, record) in snap.records {
                tables.apply_put(version, record)?;
            }
        }

        let log_path = dir.join(LOG_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .append(true)
            .open(&log_path)?;
        let good_len = replay(&mut log, &mut tables)?;
        let actual_len = log.metadata()?.len();
        if good_len < actual_len {
            warn!(
                dropped = actual_len - good_len,
                "discarding torn tail of store log"
            );
            log.set_len(good_len)?;
            log.sync_all()?;
        }
        log.seek(SeekFrom::End(0))?;

        Ok(Store {
            dir,
            tables: RwLock::new(tables),
            log: Mutex::new(log),
            _lock: lock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Runs `f` as one atomic, isolated, durable transaction.
    pub fn transaction<T, E>(
        &self,
        f: impl FnOnce(&mut Transaction<'_>) -> Result<T, E>,
    ) -> Result<T, E>
    where
        E: From<StoreError>,
    {
        let mut log = self.log.lock().unwrap_or_else(|p| p.into_inner());
        let mut tables = self.tables.write().unwrap_or_else(|p| p.into_inner());
        let start_seq = tables.next_seq;
        let mut tx = Transaction {
            tables: &mut tables,
            ops: Vec::new(),
            undo: Vec::new(),
            start_seq,
        };
        let out = match f(&mut tx) {
            Ok(out) => out,
            Err(e) => {
                tx.rollback();
                return Err(e);
            }
        };
        if tx.ops.is_empty() && tx.tables.next_seq == start_seq {
            return Ok(out);
        }
        let entry = WalEntry {
            next_seq: tx.tables.next_seq,
            ops: std::mem::take(&mut tx.ops),
        };
        if let Err(e) = append_entry(&mut log, &entry) {
            tx.rollback();
            return Err(StoreError::from(e).into());
        }
        debug!(ops = entry.ops.len(), "committed transaction");
        Ok(out)
    }

    pub fn read<T>(&self, f: impl FnOnce(&Tables) -> T) -> T {
        let tables = self.tables.read().unwrap_or_else(|p| p.into_inner());
        f(&tables)
    }

    pub fn get<E: Entity>(&self, key: &str) -> Result<Versioned<E>, StoreError> {
        self.read(|t| E::table(t).get(key).cloned())
            .ok_or_else(|| StoreError::NotFound {
                kind: E::KIND,
                key: key.to_string(),
            })
    }

    pub fn list<E: Entity>(&self, mut keep: impl FnMut(&E) -> bool) -> Vec<E> {
        self.read(|t| {
            E::table(t)
                .values()
                .filter(|v| keep(&v.value))
                .map(|v| v.value.clone())
                .collect()
        })
    }

    /// Like [`Store::list`], keeping versions.
    pub fn list_versioned<E: Entity>(&self, mut keep: impl FnMut(&E) -> bool) -> Vec<Versioned<E>> {
        self.read(|t| {
            E::table(t)
                .values()
                .filter(|v| keep(&v.value))
                .cloned()
                .collect()
        })
    }

    pub fn list_tasks(&self, filter: &TaskFilter) -> Vec<Task> {
        self.list::<Task>(|t| {
            filter.project.as_ref().is_none_or(|p| t.project_id.0 == *p)
                && filter
                    .assignee
                    .as_ref()
                    .is_none_or(|u| t.assignees.contains_key(u))
        })
    }

    pub fn list_regions(&self, filter: &RegionFilter) -> Vec<AnnotationRegion> {
        self.read(|t| {
            t.regions
                .values()
                .map(|v| &v.value)
                .filter(|r| filter.task.as_ref().is_none_or(|id| r.task_id.0 == *id))
                .filter(|r| {
                    filter
                        .annotator
                        .as_ref()
                        .is_none_or(|u| r.annotator_id == *u)
                })
                .filter(|r| filter.status.is_none_or(|s| r.status == s))
                .filter(|r| {
                    filter.project.as_ref().is_none_or(|p| {
                        t.tasks
                            .get(r.task_id.as_str())
                            .is_some_and(|task| task.value.project_id.0 == *p)
                    })
                })
                .cloned()
                .collect()
        })
    }

    pub fn find_user_by_name(&self, username: &str) -> Option<User> {
        self.list::<User>(|u| u.username == username)
            .into_iter()
            .next()
    }

    pub fn find_asset_by_digest(&self, digest: &str) -> Option<AudioAsset> {
        self.list::<AudioAsset>(|a| a.digest == digest)
            .into_iter()
            .next()
    }

    /// SHA-256 over the canonical serialization of every table.
    pub fn digest(&self) -> String {
        self.read(|t| {
            let bytes = serde_json::to_vec(t).expect("tables serialize");
            hex::encode(Sha256::digest(&bytes))
        })
    }

    pub fn blob_path(&self, digest: &str) -> PathBuf {
        self.dir.join(AUDIO_DIR).join(digest)
    }

    pub fn read_blob(&self, digest: &str) -> Result<Vec<u8>, StoreError> {
        fs::read(self.blob_path(digest)).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::NotFound {
                kind: EntityKind::Asset,
                key: digest.to_string(),
            },
            _ => e.into(),
        })
    }

    /// Stores `bytes` under their hex SHA-256 and returns the digest.
    pub fn write_blob(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let digest = hex::encode(Sha256::digest(bytes));
        let path = self.blob_path(&digest);
        if !path.exists() {
            let tmp = path.with_extension("tmp");
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)?;
            File::open(self.dir.join(AUDIO_DIR))?.sync_all()?;
        }
        Ok(digest)
    }

    /// Folds the log into a snapshot file and truncates the log.
    pub fn compact(&self) -> Result<(), StoreError> {
        let log = self.log.lock().unwrap_or_else(|p| p.into_inner());
        let tables = self.tables.read().unwrap_or_else(|p| p.into_inner());
        let snap = SnapshotFile {
            next_seq: tables.next_seq,
            records: tables.all_records(),
        };
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = path.with_extension("tmp");
        let mut f = File::create(&tmp)?;
        serde_json::to_writer(&mut f, &snap).map_err(io::Error::other)?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        File::open(&self.dir)?.sync_all()?;
        // replaying a log over a snapshot that already holds it is idempotent,
        // so a crash between rename and truncate is harmless
        log.set_len(0)?;
        log.sync_all()?;
        Ok(())
    }
}

fn append_entry(log: &mut File, entry: &WalEntry) -> io::Result<()> {
    let mut line = serde_json::to_vec(entry).map_err(io::Error::other)?;
    line.push(b'\n');
    log.write_all(&line)?;
    log.sync_data()
}

/// Applies every complete log line; returns the byte length of the valid prefix.
fn replay(log: &mut File, tables: &mut Tables) -> Result<u64, StoreError> {
    log.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&*log);
    let mut good = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        if line.last() != Some(&b'\n') {
            // torn write at the tail
            break;
        }
        match serde_json::from_slice::<WalEntry>(&line) {
            Ok(entry) => {
                tables.apply(entry)?;
                good += n as u64;
            }
            Err(e) => {
                let mut rest = Vec::new();
                io::Read::read_to_end(&mut reader, &mut rest)?;
                if rest.iter().all(|b| b.is_ascii_whitespace()) {
                    break;
                }
                return Err(StoreError::Corrupt(format!(
                    "log entry at byte {good}: {e}"
                )));
            }
        }
    }
    Ok(good)
}
