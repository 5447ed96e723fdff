//! Append-only annotation log, one JSON event per line.
//!
//! Every append is flushed and synced to disk before it returns, so an
//! acknowledged annotation survives a crash. Replaying the log and keeping
//! the latest event per `(row, label)` reconstructs the label block.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub seq: u64,
    pub row_id: usize,
    pub label_id: usize,
    pub value: u8,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    /// `seq` of the previous event on the same cell.
    pub supersedes: Option<u64>,
}

pub(crate) fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug)]
pub struct AnnotationLog {
    path: Option<PathBuf>,
    file: Option<File>,
    events: Vec<AnnotationEvent>,
    latest: HashMap<(usize, usize), u64>,
}

impl AnnotationLog {
    /// A log that lives only in memory.
    pub fn in_memory() -> Self {
        AnnotationLog {
            path: None,
            file: None,
            events: Vec::new(),
            latest: HashMap::new(),
        }
    }

    /// Opens (or creates) the log at `path` and loads its events.
    pub fn open(path: &Path) -> Result<Self> {
        let mut log = AnnotationLog::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let ev: AnnotationEvent = serde_json::from_str(&line).map_err(|e| {
                    ServiceError::Internal(format!("{}:{}: {e}", path.display(), idx + 1))
                })?;
                log.latest.insert((ev.row_id, ev.label_id), ev.seq);
                log.events.push(ev);
            }
        }
        log.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        log.path = Some(path.to_path_buf());
        Ok(log)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn events(&self) -> &[AnnotationEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends and syncs one event. Validation is the caller's job.
    pub fn append(&mut self, row_id: usize, label_id: usize, value: u8) -> Result<AnnotationEvent> {
        let seq = self.events.last().map_or(0, |e| e.seq + 1);
        let ev = AnnotationEvent {
            seq,
            row_id,
            label_id,
            value,
            timestamp: now_millis(),
            supersedes: self.latest.get(&(row_id, label_id)).copied(),
        };
        if let Some(file) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&ev)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        self.latest.insert((row_id, label_id), seq);
        self.events.push(ev.clone());
        Ok(ev)
    }

    /// Latest value per `(row, label)`, ascending.
    pub fn fold(&self) -> BTreeMap<(usize, usize), u8> {
        let mut out = BTreeMap::new();
        for ev in &self.events {
            out.insert((ev.row_id, ev.label_id), ev.value);
        }
        out
    }
}
