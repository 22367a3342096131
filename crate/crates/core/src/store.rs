//! Append-only JSONL cache of agent outputs.
//!
//! Each line is one [`CacheRecord`]. A record is written once and never
//! edited; re-putting an identical payload is a no-op and a conflicting one
//! is an integrity error. A partial final line, as left by a crash during
//! an append, is dropped with a warning.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::agents::{prompt_hash, render_prompt, AgentSpec};
use crate::domain::{AgentOutput, DisclosureRecord, Lens};
use crate::error::{Error, Result};

/// Identity of one cached generation. Field order is part of the file
/// format.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub disclosure_id: String,
    pub lens: Lens,
    pub model_name: String,
    pub prompt_hash: String,
    pub seed: u64,
}

impl CacheKey {
    pub fn for_record(spec: &AgentSpec, seed: u64, record: &DisclosureRecord) -> Self {
        Self {
            disclosure_id: record.id.clone(),
            lens: spec.lens,
            model_name: spec.model_name.clone(),
            prompt_hash: prompt_hash(&render_prompt(spec.lens, &record.clean_text)),
            seed,
        }
    }

    pub fn of_output(output: &AgentOutput) -> Self {
        Self {
            disclosure_id: output.disclosure_id.clone(),
            lens: output.agent,
            model_name: output.model_name.clone(),
            prompt_hash: output.prompt_hash.clone(),
            seed: output.seed,
        }
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}/seed={}",
            self.disclosure_id,
            self.lens,
            self.model_name,
            &self.prompt_hash[..self.prompt_hash.len().min(12)],
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: CacheKey,
    pub output: AgentOutput,
    pub created_at: DateTime<Utc>,
}

impl CacheRecord {
    pub fn new(output: AgentOutput) -> Self {
        Self {
            key: CacheKey::of_output(&output),
            output,
            created_at: Utc::now(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Appended,
    AlreadyPresent,
}

pub struct Store {
    path: PathBuf,
    writer: Option<File>,
    index: HashMap<CacheKey, CacheRecord>,
    unsynced: usize,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("path", &self.path)
            .field("records", &self.index.len())
            .finish()
    }
}

struct Loaded {
    index: HashMap<CacheKey, CacheRecord>,
    /// Byte length of the well-formed prefix.
    valid_len: u64,
    needs_newline: bool,
}

fn load(path: &Path, bytes: &[u8]) -> Result<Loaded> {
    let mut index = HashMap::new();
    let mut offset = 0usize;
    let mut valid_len = 0u64;
    let mut needs_newline = false;
    while offset < bytes.len() {
        let (line, terminated) = match bytes[offset..].iter().position(|&b| b == b'\n') {
            Some(nl) => (&bytes[offset..offset + nl], true),
            None => (&bytes[offset..], false),
        };
        let next = offset + line.len() + usize::from(terminated);
        if line.iter().all(u8::is_ascii_whitespace) {
            offset = next;
            valid_len = next as u64;
            continue;
        }
        match serde_json::from_slice::<CacheRecord>(line) {
            Ok(record) => {
                if record.key != CacheKey::of_output(&record.output) {
                    return Err(Error::CorruptStore {
                        offset: offset as u64,
                        message: format!("key {} does not match its output", record.key),
                    });
                }
                if let Some(prev) = index.get(&record.key) {
                    let prev: &CacheRecord = prev;
                    if prev.output != record.output {
                        return Err(Error::Integrity(format!(
                            "{}: conflicting records for {}",
                            path.display(),
                            record.key
                        )));
                    }
                } else {
                    index.insert(record.key.clone(), record);
                }
                valid_len = next as u64;
                needs_newline = !terminated;
            }
            Err(e) if !terminated => {
                warn!(
                    path = %path.display(),
                    offset,
                    "ignoring truncated final store line ({e})"
                );
                break;
            }
            Err(e) => {
                return Err(Error::CorruptStore {
                    offset: offset as u64,
                    message: e.to_string(),
                })
            }
        }
        offset = next;
    }
    Ok(Loaded {
        index,
        valid_len,
        needs_newline,
    })
}

impl Store {
    /// Opens (creating if needed) a store for appending. A truncated final
    /// line is cut off so that the next append starts on a clean line.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let loaded = load(&path, &bytes)?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if loaded.valid_len < bytes.len() as u64 {
            file.set_len(loaded.valid_len).map_err(|e| Error::io(&path, e))?;
        }
        if loaded.needs_newline {
            file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self {
            path,
            writer: Some(file),
            index: loaded.index,
            unsynced: 0,
        })
    }

    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let bytes = std::fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(format!("store file {} missing", path.display()))
            } else {
                Error::io(&path, e)
            }
        })?;
        let loaded = load(&path, &bytes)?;
        Ok(Self {
            path,
            writer: None,
            index: loaded.index,
            unsynced: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, key: &CacheKey) -> Option<&CacheRecord> {
        self.index.get(key)
    }

    /// All records, in no particular order.
    pub fn records(&self) -> impl Iterator<Item = &CacheRecord> {
        self.index.values()
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn put(&mut self, record: CacheRecord) -> Result<PutOutcome> {
        if record.key != CacheKey::of_output(&record.output) {
            return Err(Error::Integrity(format!(
                "key {} does not describe its output",
                record.key
            )));
        }
        if let Some(existing) = self.index.get(&record.key) {
            if existing.output == record.output {
                return Ok(PutOutcome::AlreadyPresent);
            }
            return Err(Error::Integrity(format!(
                "refusing to overwrite {} with a different payload",
                record.key
            )));
        }
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::Integrity("store opened read-only".into()))?;
        let mut line = serde_json::to_vec(&record).map_err(|e| Error::io(&self.path, e.into()))?;
        line.push(b'\n');
        writer.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.unsynced += 1;
        self.index.insert(record.key.clone(), record);
        Ok(PutOutcome::Appended)
    }

    /// Flushes appended records to disk.
    pub fn sync(&mut self) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            if self.unsynced > 0 {
                w.sync_data().map_err(|e| Error::io(&self.path, e))?;
                self.unsynced = 0;
            }
        }
        Ok(())
    }

    /// The output cached for `spec` on `record`, if any.
    pub fn output_for(
        &self,
        spec: &AgentSpec,
        seed: u64,
        record: &DisclosureRecord,
    ) -> Option<&AgentOutput> {
        self.get(&CacheKey::for_record(spec, seed, record)).map(|r| &r.output)
    }

    /// Every (disclosure, agent) pair without a cached record, in corpus
    /// then agent order.
    pub fn coverage(
        &self,
        records: &[&DisclosureRecord],
        agents: &[AgentSpec],
        seed: u64,
    ) -> Vec<CacheKey> {
        records
            .iter()
            .flat_map(|r| agents.iter().map(move |a| CacheKey::for_record(a, seed, r)))
            .filter(|k| !self.contains(k))
            .collect()
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        if let Err(e) = self.sync() {
            warn!("store sync on close failed: {e}");
        }
    }
}
