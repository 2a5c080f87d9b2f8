use super::{StoredRecord, SubmissionEnvelope};
use crate::caption::CaptionRecord;
use crate::model::Assessment;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

pub const LOG_FILE: &str = "records.ndjson";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store unavailable: {0}")]
    Unavailable(String),
    #[error("corrupt store log at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("unknown record {0}")]
    UnknownRecord(u64),
}

fn unavailable(e: impl std::fmt::Display) -> StoreError {
    StoreError::Unavailable(e.to_string())
}

pub(crate) fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogEntry {
    Submit {
        record_id: u64,
        envelope: SubmissionEnvelope,
        created_at: u64,
    },
    Assess {
        record_id: u64,
        assessment: Assessment,
        caption: Option<CaptionRecord>,
        assessed_at: u64,
    },
}

/// Append-only log of submissions and assessments with an in-memory index
/// rebuilt from the log on open. Every append is synced before returning.
#[derive(Debug)]
pub struct Store {
    path: PathBuf,
    index: RwLock<BTreeMap<u64, Arc<StoredRecord>>>,
    writer: Mutex<Writer>,
}

#[derive(Debug)]
struct Writer {
    file: File,
    next_id: u64,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(unavailable)?;
        let path = dir.join(LOG_FILE);
        let mut index = BTreeMap::new();
        if path.exists() {
            let bytes = std::fs::read(&path).map_err(unavailable)?;
            let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if complete < bytes.len() {
                // an unacknowledged write was cut off
                let f = OpenOptions::new().write(true).open(&path).map_err(unavailable)?;
                f.set_len(complete as u64).map_err(unavailable)?;
            }
            let text = std::str::from_utf8(&bytes[..complete]).map_err(unavailable)?;
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| StoreError::Corrupt { line: n + 1, message };
                let entry: LogEntry = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
                apply(&mut index, entry).map_err(|e| corrupt(e.to_string()))?;
            }
        }
        let next_id = index.keys().next_back().map_or(1, |k| k + 1);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(unavailable)?;
        Ok(Store {
            path,
            index: RwLock::new(index),
            writer: Mutex::new(Writer { file, next_id }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, record_id: u64) -> Option<Arc<StoredRecord>> {
        self.index.read().unwrap().get(&record_id).cloned()
    }

    /// Persists the envelope and returns its new id.
    pub fn submit(&self, envelope: SubmissionEnvelope) -> Result<u64, StoreError> {
        let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let record_id = w.next_id;
        let entry = LogEntry::Submit {
            record_id,
            envelope,
            created_at: now_unix(),
        };
        append(&mut w.file, &entry)?;
        w.next_id += 1;
        apply(&mut self.index.write().unwrap(), entry)?;
        Ok(record_id)
    }

    /// Attaches an assessment unless one is already stored; returns the
    /// stored record either way.
    pub fn record_assessment(
        &self,
        record_id: u64,
        assessment: Assessment,
        caption: Option<CaptionRecord>,
    ) -> Result<Arc<StoredRecord>, StoreError> {
        let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let current = self.get(record_id).ok_or(StoreError::UnknownRecord(record_id))?;
        if current.assessment.is_some() {
            return Ok(current);
        }
        let entry = LogEntry::Assess {
            record_id,
            assessment,
            caption,
            assessed_at: now_unix(),
        };
        append(&mut w.file, &entry)?;
        let mut index = self.index.write().unwrap();
        apply(&mut index, entry)?;
        Ok(index[&record_id].clone())
    }
}

fn append(file: &mut File, entry: &LogEntry) -> Result<(), StoreError> {
    let mut line = serde_json::to_vec(entry).map_err(unavailable)?;
    line.push(b'\n');
    file.write_all(&line).map_err(unavailable)?;
    file.sync_data().map_err(unavailable)
}

fn apply(index: &mut BTreeMap<u64, Arc<StoredRecord>>, entry: LogEntry) -> Result<(), StoreError> {
    match entry {
        LogEntry::Submit {
            record_id,
            envelope,
            created_at,
        } => {
            index.insert(
                record_id,
                Arc::new(StoredRecord {
                    record_id,
                    envelope,
                    assessment: None,
                    caption: None,
                    created_at,
                    assessed_at: None,
                }),
            );
        }
        LogEntry::Assess {
            record_id,
            assessment,
            caption,
            assessed_at,
        } => {
            let old = index.get(&record_id).ok_or(StoreError::UnknownRecord(record_id))?;
            let mut rec = StoredRecord::clone(old);
            if rec.assessment.is_none() {
                rec.assessment = Some(assessment);
                rec.caption = caption;
                rec.assessed_at = Some(assessed_at);
            }
            index.insert(record_id, Arc::new(rec));
        }
    }
    Ok(())
}
