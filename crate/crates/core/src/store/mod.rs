//! Append-only run persistence.
//!
//! Every run owns a log of [`EventLogRecord`]s, content-addressed artifact
//! payloads and the latest progress snapshot. A [`Store`] keeps them in
//! memory and, when opened on a directory, writes through to
//!
//! ```text
//! <root>/<run id>/log.ndjson          one record per line
//! <root>/<run id>/artifacts/<sha256>.json
//! <root>/<run id>/state.json          latest snapshot
//! ```

mod replay;

pub use replay::{replay, verify_against, ArtifactMeta, GanttRow, LogFolder, ReplayError, RunState, RunStatus};

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::watch;

use crate::crew::Artifact;
use crate::graph::EventId;
use crate::scheduler::ProgressReport;
use crate::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Start,
    Enqueue,
    Revoke,
    Complete,
    /// A worker attempt ended in error.
    Fail,
    Feedback,
    Wait,
    Finish,
}

/// One transition in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogRecord {
    pub seq: u64,
    pub time: Time,
    pub slice: u64,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<EventId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    #[serde(default)]
    pub payload: Value,
}

impl EventLogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{0}` already exists")]
    RunExists(String),
    #[error("sequence gap: expected seq {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("run `{0}` is closed")]
    RunClosed(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

/// Where the run loop writes its transitions.
pub trait LogSink: Send {
    /// Appends a record whose seq must follow the last one.
    fn append(&mut self, record: EventLogRecord) -> Result<u64, StoreError>;

    fn put_artifact(&mut self, _artifact: &Artifact) -> Result<(), StoreError> {
        Ok(())
    }

    /// Latest progress report, written after every slice.
    fn snapshot(&mut self, _report: &ProgressReport) -> Result<(), StoreError> {
        Ok(())
    }
}

/// An in-memory log, as produced by a simulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    records: Vec<EventLogRecord>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[EventLogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&record.to_line());
            out.push('\n');
        }
        out
    }

    /// Parses NDJSON without checking sequence; [`replay`] does that.
    pub fn from_ndjson(text: &str) -> Result<Self, ReplayError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ReplayError::Parse { line: i + 1, message: e.to_string() })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn kinds(&self) -> impl Iterator<Item = RecordKind> + '_ {
        self.records.iter().map(|r| r.kind)
    }

    pub fn count(&self, kind: RecordKind) -> usize {
        self.kinds().filter(|k| *k == kind).count()
    }
}

impl From<Vec<EventLogRecord>> for RunLog {
    fn from(records: Vec<EventLogRecord>) -> Self {
        Self { records }
    }
}

impl LogSink for RunLog {
    fn append(&mut self, record: EventLogRecord) -> Result<u64, StoreError> {
        let expected = self.records.len() as u64;
        if record.seq != expected {
            return Err(StoreError::SequenceGap { expected, got: record.seq });
        }
        self.records.push(record);
        Ok(expected)
    }
}

/// Progress of a run's log, published to tailing readers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LogCursor {
    pub len: u64,
    pub closed: bool,
}

#[derive(Debug)]
struct RunEntry {
    dir: Option<PathBuf>,
    records: RwLock<Vec<EventLogRecord>>,
    blobs: RwLock<BTreeMap<String, Value>>,
    report: RwLock<Option<ProgressReport>>,
    cursor: watch::Sender<LogCursor>,
}

impl RunEntry {
    fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            records: RwLock::default(),
            blobs: RwLock::default(),
            report: RwLock::default(),
            cursor: watch::channel(LogCursor::default()).0,
        }
    }
}

/// Shared run storage: one writer per run, any number of readers.
#[derive(Debug, Clone, Default)]
pub struct Store {
    root: Option<PathBuf>,
    runs: Arc<RwLock<BTreeMap<String, Arc<RunEntry>>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateFile {
    run_id: String,
    latest_report: ProgressReport,
}

impl Store {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a directory store, loading any runs already in it.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let store = Self { root: Some(root.clone()), runs: Arc::default() };
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
            .map_err(io_err(&root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("log.ndjson").is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let run_id = dir.file_name().unwrap().to_string_lossy().into_owned();
            let entry = load_run(&dir)?;
            store.runs.write().unwrap().insert(run_id, Arc::new(entry));
        }
        Ok(store)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn create_run(&self, run_id: &str) -> Result<(), StoreError> {
        let mut runs = self.runs.write().unwrap();
        if runs.contains_key(run_id) {
            return Err(StoreError::RunExists(run_id.to_owned()));
        }
        let dir = match &self.root {
            Some(root) => {
                let dir = root.join(run_id);
                if dir.join("log.ndjson").exists() {
                    return Err(StoreError::RunExists(run_id.to_owned()));
                }
                fs::create_dir_all(dir.join("artifacts")).map_err(io_err(&dir))?;
                fs::write(dir.join("log.ndjson"), b"").map_err(io_err(&dir))?;
                Some(dir)
            }
            None => None,
        };
        runs.insert(run_id.to_owned(), Arc::new(RunEntry::new(dir)));
        Ok(())
    }

    pub fn run_ids(&self) -> Vec<String> {
        self.runs.read().unwrap().keys().cloned().collect()
    }

    pub fn contains(&self, run_id: &str) -> bool {
        self.runs.read().unwrap().contains_key(run_id)
    }

    fn entry(&self, run_id: &str) -> Result<Arc<RunEntry>, StoreError> {
        self.runs.read().unwrap().get(run_id).cloned().ok_or_else(|| StoreError::UnknownRun(run_id.to_owned()))
    }

    pub fn append(&self, run_id: &str, record: EventLogRecord) -> Result<u64, StoreError> {
        let entry = self.entry(run_id)?;
        let mut records = entry.records.write().unwrap();
        if records.last().is_some_and(|r| r.kind == RecordKind::Finish) {
            return Err(StoreError::RunClosed(run_id.to_owned()));
        }
        let expected = records.len() as u64;
        if record.seq != expected {
            return Err(StoreError::SequenceGap { expected, got: record.seq });
        }
        if let Some(dir) = &entry.dir {
            let path = dir.join("log.ndjson");
            let mut file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
            writeln!(file, "{}", record.to_line()).map_err(io_err(&path))?;
        }
        let closed = record.kind == RecordKind::Finish;
        records.push(record);
        let len = records.len() as u64;
        drop(records);
        entry.cursor.send_replace(LogCursor { len, closed });
        Ok(expected)
    }

    pub fn put_artifact(&self, run_id: &str, artifact: &Artifact) -> Result<(), StoreError> {
        let entry = self.entry(run_id)?;
        let mut blobs = entry.blobs.write().unwrap();
        if blobs.contains_key(&artifact.content_hash) {
            return Ok(());
        }
        if let Some(dir) = &entry.dir {
            let path = dir.join("artifacts").join(format!("{}.json", artifact.content_hash));
            fs::write(&path, artifact.content_bytes()).map_err(io_err(&path))?;
        }
        blobs.insert(artifact.content_hash.clone(), artifact.content.clone());
        Ok(())
    }

    pub fn snapshot(&self, run_id: &str, report: &ProgressReport) -> Result<(), StoreError> {
        let entry = self.entry(run_id)?;
        if let Some(dir) = &entry.dir {
            let path = dir.join("state.json");
            let state = StateFile { run_id: run_id.to_owned(), latest_report: report.clone() };
            let text = serde_json::to_string_pretty(&state).expect("state serializes");
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        *entry.report.write().unwrap() = Some(report.clone());
        Ok(())
    }

    /// Records with `seq >= from`, at most `limit` of them.
    pub fn records(&self, run_id: &str, from: u64, limit: Option<usize>) -> Result<Vec<EventLogRecord>, StoreError> {
        let entry = self.entry(run_id)?;
        let records = entry.records.read().unwrap();
        let start = (from as usize).min(records.len());
        let end = limit.map_or(records.len(), |l| (start + l).min(records.len()));
        Ok(records[start..end].to_vec())
    }

    pub fn log(&self, run_id: &str) -> Result<RunLog, StoreError> {
        Ok(RunLog::from(self.records(run_id, 0, None)?))
    }

    pub fn latest_report(&self, run_id: &str) -> Result<Option<ProgressReport>, StoreError> {
        Ok(self.entry(run_id)?.report.read().unwrap().clone())
    }

    /// Content by hash.
    pub fn blob(&self, run_id: &str, content_hash: &str) -> Result<Option<Value>, StoreError> {
        Ok(self.entry(run_id)?.blobs.read().unwrap().get(content_hash).cloned())
    }

    /// Folds the log into the current run state.
    pub fn state(&self, run_id: &str) -> Result<Result<RunState, ReplayError>, StoreError> {
        Ok(replay(self.entry(run_id)?.records.read().unwrap().as_slice()))
    }

    pub fn is_closed(&self, run_id: &str) -> Result<bool, StoreError> {
        Ok(self.entry(run_id)?.cursor.borrow().closed)
    }

    /// Watches the log length; readers wake on every append.
    pub fn subscribe(&self, run_id: &str) -> Result<watch::Receiver<LogCursor>, StoreError> {
        Ok(self.entry(run_id)?.cursor.subscribe())
    }

    pub fn sink(&self, run_id: &str) -> Result<StoreSink, StoreError> {
        self.entry(run_id)?;
        Ok(StoreSink { store: self.clone(), run_id: run_id.to_owned() })
    }
}

fn load_run(dir: &Path) -> Result<RunEntry, StoreError> {
    let log_path = dir.join("log.ndjson");
    let text = fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
    let log = RunLog::from_ndjson(&text)
        .map_err(|e| StoreError::Corrupt { path: log_path.display().to_string(), message: e.to_string() })?;
    let entry = RunEntry::new(Some(dir.to_path_buf()));
    let artifacts = dir.join("artifacts");
    if artifacts.is_dir() {
        let mut blobs = entry.blobs.write().unwrap();
        for file in fs::read_dir(&artifacts).map_err(io_err(&artifacts))? {
            let path = file.map_err(io_err(&artifacts))?.path();
            let Some(hash) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else { continue };
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let value = serde_json::from_slice(&bytes)
                .map_err(|e| StoreError::Corrupt { path: path.display().to_string(), message: e.to_string() })?;
            blobs.insert(hash, value);
        }
    }
    let state_path = dir.join("state.json");
    if state_path.is_file() {
        let text = fs::read_to_string(&state_path).map_err(io_err(&state_path))?;
        let state: StateFile = serde_json::from_str(&text)
            .map_err(|e| StoreError::Corrupt { path: state_path.display().to_string(), message: e.to_string() })?;
        *entry.report.write().unwrap() = Some(state.latest_report);
    }
    let closed = log.records().last().is_some_and(|r| r.kind == RecordKind::Finish);
    let len = log.len() as u64;
    *entry.records.write().unwrap() = log.records;
    entry.cursor.send_replace(LogCursor { len, closed });
    Ok(entry)
}

/// Reads the snapshot written next to a log, if any.
pub fn read_state_file(dir: &Path) -> Result<Option<ProgressReport>, StoreError> {
    let path = dir.join("state.json");
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let state: StateFile = serde_json::from_str(&text)
        .map_err(|e| StoreError::Corrupt { path: path.display().to_string(), message: e.to_string() })?;
    Ok(Some(state.latest_report))
}

/// A [`LogSink`] writing into one run of a [`Store`].
#[derive(Debug, Clone)]
pub struct StoreSink {
    store: Store,
    run_id: String,
}

impl LogSink for StoreSink {
    fn append(&mut self, record: EventLogRecord) -> Result<u64, StoreError> {
        self.store.append(&self.run_id, record)
    }

    fn put_artifact(&mut self, artifact: &Artifact) -> Result<(), StoreError> {
        self.store.put_artifact(&self.run_id, artifact)
    }

    fn snapshot(&mut self, report: &ProgressReport) -> Result<(), StoreError> {
        self.store.snapshot(&self.run_id, report)
    }
}
