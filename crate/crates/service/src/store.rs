//! Sessions and their append-only version history, persisted as one
//! JSON-lines file per session.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use semantic_panel::edit::EditOp;
use semantic_panel::llm::SessionLog;
use semantic_panel::panel::SemanticPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    Llm,
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Create,
    Ops,
    Chat,
    Undo,
}

/// One version of a session's panel and how it came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub version: u64,
    /// The version this one was derived from; undo follows this chain.
    pub parent: Option<u64>,
    pub cause: Cause,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ops: Vec<EditOp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    /// For undo entries, the version whose panel was reinstated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restored: Option<u64>,
    pub at: DateTime<Utc>,
    pub panel: SemanticPanel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<SessionLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub mode: SessionMode,
    pub prompt: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Meta(SessionMeta),
    Version(Box<HistoryEntry>),
}

/// Summary returned by the API alongside panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub mode: SessionMode,
    pub version: u64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug)]
pub struct Session {
    pub meta: SessionMeta,
    history: Vec<HistoryEntry>,
    file: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session file {path}: {message}")]
    Io { path: String, message: String },
    #[error("session file {path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn append_line(path: &Path, line: &Line) -> Result<(), StoreError> {
    let mut text = serde_json::to_string(line).expect("history lines serialize");
    text.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    f.sync_data().map_err(|e| io_err(path, e))
}

impl Session {
    /// Start a session at version 0; with a data directory, the file is
    /// created before the session exists in memory.
    pub fn create(meta: SessionMeta, first: HistoryEntry, dir: Option<&Path>) -> Result<Self, StoreError> {
        let file = dir.map(|d| d.join(format!("{}.jsonl", meta.id)));
        if let Some(path) = &file {
            append_line(path, &Line::Meta(meta.clone()))?;
            append_line(path, &Line::Version(Box::new(first.clone())))?;
        }
        Ok(Self { meta, history: vec![first], file })
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let corrupt = |line: usize, message: String| StoreError::Corrupt { path: path.display().to_string(), line, message };
        let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
        let mut meta = None;
        let mut history: Vec<HistoryEntry> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line).map_err(|e| corrupt(i + 1, e.to_string()))? {
                Line::Meta(m) if meta.is_none() => meta = Some(m),
                Line::Meta(_) => return Err(corrupt(i + 1, "second meta line".into())),
                Line::Version(v) => {
                    let want = history.len() as u64;
                    if v.version != want || v.panel.version != want {
                        return Err(corrupt(i + 1, format!("expected version {want}, found {}", v.version)));
                    }
                    history.push(*v);
                }
            }
        }
        let meta = meta.ok_or_else(|| corrupt(1, "missing meta line".into()))?;
        if history.is_empty() {
            return Err(corrupt(1, "no versions".into()));
        }
        Ok(Self { meta, history, file: Some(path.to_path_buf()) })
    }

    pub fn head(&self) -> &HistoryEntry {
        self.history.last().expect("sessions always have version 0")
    }

    pub fn version(&self) -> u64 {
        self.head().version
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn get(&self, version: u64) -> Option<&HistoryEntry> {
        self.history.get(usize::try_from(version).ok()?)
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            id: self.meta.id.clone(),
            mode: self.meta.mode,
            version: self.version(),
            created_at: self.meta.created_at,
            updated_at: self.head().at,
        }
    }

    /// Persist then record the next version. On a write failure nothing
    /// changes in memory.
    pub fn append(&mut self, entry: HistoryEntry) -> Result<(), StoreError> {
        assert_eq!(entry.version, self.version() + 1, "history is dense");
        assert_eq!(entry.panel.version, entry.version, "panel version tracks history");
        if let Some(path) = &self.file {
            append_line(path, &Line::Version(Box::new(entry.clone())))?;
        }
        self.history.push(entry);
        Ok(())
    }

    /// The entry an undo of the head would reinstate.
    pub fn undo_target(&self) -> Option<&HistoryEntry> {
        self.head().parent.and_then(|p| self.get(p))
    }
}

/// Load every `*.jsonl` session file in `dir`; unreadable files are
/// reported and skipped.
pub fn load_dir(dir: &Path) -> Result<(Vec<Session>, Vec<StoreError>), StoreError> {
    let mut sessions = Vec::new();
    let mut errors = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    for p in paths {
        match Session::load(&p) {
            Ok(s) => sessions.push(s),
            Err(e) => errors.push(e),
        }
    }
    Ok((sessions, errors))
}
