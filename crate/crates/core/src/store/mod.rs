//! Event-sourced project persistence, graph export and stage accounting.
//!
//! On disk a project is a directory:
//!
//! ```text
//! <project>/events.jsonl            one {"version": n, "event": {...}} per line
//! <project>/snapshots/v00000500.json  state after event 500 (every N events)
//! <project>/exports/graph-v00000812.jsonl
//! ```
//!
//! The log is authoritative. Snapshots only speed up loading; replaying the
//! full log reproduces the latest snapshot byte for byte.

mod accounting;
mod event;
mod export;
mod project;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use accounting::{stage_accounting, CorpusCounts, StageReport};
pub use event::{AssignmentReason, Event, FailureRecord};
pub use export::{export_graph, write_graph, GraphEdge, GraphNode, GraphRecord, NodeType};
pub use project::Project;

use crate::error::{Error, Result};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const EXPORT_DIR: &str = "exports";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub version: u64,
    pub event: Event,
}

/// Single-writer store. Readers take cloned snapshots.
#[derive(Debug, Clone)]
pub struct Store {
    events: Vec<Event>,
    project: Project,
    dir: Option<PathBuf>,
    snapshot_every: u64,
}

impl Default for Store {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            events: Vec::new(),
            project: Project::default(),
            dir: None,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }

    /// Opens (or creates) a project directory and replays its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let log_path = dir.join(EVENTS_FILE);
        let mut events = Vec::new();
        if log_path.exists() {
            let text = std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let complete = drop_torn_tail(&log_path, &text)?;
            for (n, line) in text[..complete].lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogEntry = serde_json::from_str(line).map_err(|e| {
                    Error::Parse(format!("{}:{}: {e}", log_path.display(), n + 1))
                })?;
                if entry.version != events.len() as u64 + 1 {
                    return Err(Error::Parse(format!(
                        "{}:{}: version {} out of sequence",
                        log_path.display(),
                        n + 1,
                        entry.version
                    )));
                }
                events.push(entry.event);
            }
        }
        let mut store = Self {
            events: Vec::new(),
            project: Project::default(),
            dir: Some(dir),
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        };
        let (mut project, from) = store.nearest_snapshot(events.len() as u64)?;
        for e in &events[from as usize..] {
            project.apply(e)?;
        }
        store.events = events;
        store.project = project;
        Ok(store)
    }

    pub fn with_snapshot_every(mut self, every: u64) -> Self {
        self.snapshot_every = every.max(1);
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn project(&self) -> &Project {
        &self.project
    }

    pub fn version(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Validates and appends one event; returns the new version.
    pub fn append(&mut self, event: Event) -> Result<u64> {
        self.append_all(vec![event])
    }

    /// Appends a batch atomically: either every event applies or none does.
    pub fn append_all(&mut self, events: Vec<Event>) -> Result<u64> {
        if events.is_empty() {
            return Ok(self.version());
        }
        let mut next = self.project.clone();
        for e in &events {
            next.apply(e)?;
        }
        let first = self.version() + 1;
        if let Some(dir) = &self.dir {
            let mut buf = Vec::new();
            for (i, e) in events.iter().enumerate() {
                let entry = LogEntry {
                    version: first + i as u64,
                    event: e.clone(),
                };
                serde_json::to_writer(&mut buf, &entry)?;
                buf.push(b'\n');
            }
            let path = dir.join(EVENTS_FILE);
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            f.write_all(&buf).map_err(|e| Error::io(&path, e))?;
            f.sync_data().map_err(|e| Error::io(&path, e))?;
        }
        let before = self.version();
        self.events.extend(events);
        self.project = next;
        if self.dir.is_some() && before / self.snapshot_every != self.version() / self.snapshot_every {
            self.write_snapshot()?;
        }
        Ok(self.version())
    }

    /// State after the first `version` events.
    pub fn snapshot(&self, version: u64) -> Result<Project> {
        if version > self.version() {
            return Err(Error::not_found("version", version.to_string()));
        }
        if version == self.version() {
            return Ok(self.project.clone());
        }
        let (mut project, from) = self.nearest_snapshot(version)?;
        for e in &self.events[from as usize..version as usize] {
            project.apply(e)?;
        }
        Ok(project)
    }

    /// Folds the whole log from scratch, ignoring snapshot files.
    pub fn replay(&self) -> Result<Project> {
        replay(&self.events)
    }

    /// Writes the current state to the snapshot directory.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        let dir = self
            .dir
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("in-memory store has no snapshot directory".into()))?
            .join(SNAPSHOT_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("v{:08}.json", self.version()));
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.project.to_json()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn nearest_snapshot(&self, version: u64) -> Result<(Project, u64)> {
        let Some(dir) = &self.dir else {
            return Ok((Project::default(), 0));
        };
        let snap_dir = dir.join(SNAPSHOT_DIR);
        let Ok(entries) = std::fs::read_dir(&snap_dir) else {
            return Ok((Project::default(), 0));
        };
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(v) = name
                .strip_prefix('v')
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            if v <= version && best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, entry.path()));
            }
        }
        match best {
            None => Ok((Project::default(), 0)),
            Some((v, path)) => {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let project: Project = serde_json::from_str(&text)?;
                Ok((project, v))
            }
        }
    }

    /// Writes the graph export for the current version and returns its path.
    pub fn write_export(&self) -> Result<PathBuf> {
        let dir = self
            .dir
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("in-memory store has no export directory".into()))?
            .join(EXPORT_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("graph-v{:08}.jsonl", self.version()));
        let records = export_graph(&self.project)?;
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_graph(&records, &mut f).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Length of the log prefix that ends in a newline. A trailing partial
/// line is what an interrupted append leaves behind; it is cut from the
/// file. An unterminated line that still parses is kept and terminated.
fn drop_torn_tail(path: &Path, text: &str) -> Result<usize> {
    let end = text.rfind('\n').map_or(0, |i| i + 1);
    let tail = &text[end..];
    if tail.trim().is_empty() {
        return Ok(text.len());
    }
    if serde_json::from_str::<LogEntry>(tail).is_ok() {
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        return Ok(text.len());
    }
    log::warn!("{}: dropping {} bytes of an interrupted append", path.display(), tail.len());
    let f = std::fs::OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.set_len(end as u64).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))?;
    Ok(end)
}

/// Folds events into a fresh project.
pub fn replay(events: &[Event]) -> Result<Project> {
    let mut project = Project::default();
    for e in events {
        project.apply(e)?;
    }
    Ok(project)
}
