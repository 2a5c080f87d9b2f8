use super::{CaptionError, CaptionRecord};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

type Key = (String, String);

/// Caption store keyed by `(sketch_hash, template_version)`.
///
/// Backed by an append-only newline-delimited JSON file when opened from a
/// path. Readers share the in-memory index; writes are serialized.
#[derive(Debug)]
pub struct CaptionCache {
    path: Option<PathBuf>,
    index: RwLock<HashMap<Key, CaptionRecord>>,
    writer: Mutex<Option<File>>,
}

fn io(e: impl std::fmt::Display) -> CaptionError {
    CaptionError::CacheIo(e.to_string())
}

impl CaptionCache {
    pub fn in_memory() -> Self {
        CaptionCache {
            path: None,
            index: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Load an existing cache file or create an empty one. Bytes after the
    /// last newline are an interrupted write and are discarded; any other
    /// malformed line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CaptionError> {
        let path = path.as_ref().to_path_buf();
        let mut index = HashMap::new();
        if path.exists() {
            let bytes = std::fs::read(&path).map_err(io)?;
            let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if complete < bytes.len() {
                // drop the torn tail so the next append starts on a fresh line
                let f = OpenOptions::new().write(true).open(&path).map_err(io)?;
                f.set_len(complete as u64).map_err(io)?;
            }
            let text = std::str::from_utf8(&bytes[..complete]).map_err(io)?;
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CaptionRecord = serde_json::from_str(line)
                    .map_err(|e| io(format!("{}: line {}: {e}", path.display(), n + 1)))?;
                index
                    .entry((rec.sketch_hash.clone(), rec.template_version.clone()))
                    .or_insert(rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(CaptionCache {
            path: Some(path),
            index: RwLock::new(index),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, sketch_hash: &str, template_version: &str) -> Option<CaptionRecord> {
        self.index
            .read()
            .unwrap()
            .get(&(sketch_hash.to_string(), template_version.to_string()))
            .cloned()
    }

    /// Store `record` unless its key is already present; returns the stored
    /// record either way.
    pub fn insert(&self, record: CaptionRecord) -> Result<CaptionRecord, CaptionError> {
        let mut writer = self.writer.lock().unwrap();
        let key = (record.sketch_hash.clone(), record.template_version.clone());
        if let Some(existing) = self.index.read().unwrap().get(&key) {
            return Ok(existing.clone());
        }
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(io)?;
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io)?;
            file.sync_data().map_err(io)?;
        }
        self.index.write().unwrap().insert(key, record.clone());
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<CaptionRecord> {
        let mut out: Vec<_> = self.index.read().unwrap().values().cloned().collect();
        out.sort_by(|a, b| (&a.sketch_hash, &a.template_version).cmp(&(&b.sketch_hash, &b.template_version)));
        out
    }
}
