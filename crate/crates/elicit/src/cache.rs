//! Append-only, sharded JSON-lines cache of elicitation records.
//!
//! Layout: `<dir>/shard-<h>.jsonl` where `<h>` is the first hex digit of the
//! SHA-256 of the record key. Every reply is stored, including ones that
//! failed to parse; only parsed records count as hits.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompts::PromptKind;
use crate::ElicitError;

const SHARDS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub persona_id: String,
    pub question_id: String,
    /// Model name plus any sampling parameters.
    pub model: String,
    pub prompt_hash: String,
}

impl CacheKey {
    fn shard(&self) -> usize {
        let mut h = Sha256::new();
        for part in [
            &self.persona_id,
            &self.question_id,
            &self.model,
            &self.prompt_hash,
        ] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        (h.finalize()[0] >> 4) as usize % SHARDS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum Parsed {
    Distribution(Vec<f64>),
    Mode(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationRecord {
    #[serde(flatten)]
    pub key: CacheKey,
    pub kind: PromptKind,
    /// Reply text exactly as received.
    pub raw: String,
    pub parsed: Option<Parsed>,
    pub error: Option<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// 1-based attempt number that produced this reply.
    pub attempt: usize,
}

pub struct Cache {
    dir: PathBuf,
    hits: HashMap<CacheKey, ElicitationRecord>,
    writers: Vec<Mutex<()>>,
}

impl Cache {
    /// Opens (creating if needed) a cache directory and indexes its parsed
    /// records. Later records override earlier ones.
    pub fn open(dir: &Path) -> Result<Self, ElicitError> {
        std::fs::create_dir_all(dir).map_err(|e| ElicitError::io(dir, e))?;
        let mut hits = HashMap::new();
        for s in 0..SHARDS {
            let path = Self::shard_path(dir, s);
            if !path.exists() {
                continue;
            }
            let file = File::open(&path).map_err(|e| ElicitError::io(&path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| ElicitError::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ElicitationRecord =
                    serde_json::from_str(&line).map_err(|e| ElicitError::Cache {
                        path: path.clone(),
                        message: format!("line {}: {e}", i + 1),
                    })?;
                if record.parsed.is_some() {
                    hits.insert(record.key.clone(), record);
                }
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            hits,
            writers: (0..SHARDS).map(|_| Mutex::new(())).collect(),
        })
    }

    fn shard_path(dir: &Path, shard: usize) -> PathBuf {
        dir.join(format!("shard-{shard:x}.jsonl"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, key: &CacheKey) -> Option<&ElicitationRecord> {
        self.hits.get(key)
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// Appends one record to its shard. Safe to call from several threads.
    pub fn append(&self, record: &ElicitationRecord) -> Result<(), ElicitError> {
        let shard = record.key.shard();
        let path = Self::shard_path(&self.dir, shard);
        let mut line = serde_json::to_string(record).map_err(|e| ElicitError::Cache {
            path: path.clone(),
            message: e.to_string(),
        })?;
        line.push('\n');
        let _guard = self.writers[shard]
            .lock()
            .unwrap_or_else(|p| p.into_inner());
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ElicitError::io(&path, e))?;
        file.write_all(line.as_bytes())
            .map_err(|e| ElicitError::io(&path, e))?;
        file.flush().map_err(|e| ElicitError::io(&path, e))
    }

    /// Makes a freshly appended parsed record visible to [`Cache::get`].
    pub(crate) fn remember(&mut self, record: ElicitationRecord) {
        if record.parsed.is_some() {
            self.hits.insert(record.key.clone(), record);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(persona: &str, parsed: Option<Parsed>) -> ElicitationRecord {
        ElicitationRecord {
            key: CacheKey {
                persona_id: persona.into(),
                question_id: "q".into(),
                model: "m".into(),
                prompt_hash: "h".into(),
            },
            kind: PromptKind::Distribution,
            raw: "[0.5, 0.5]".into(),
            parsed,
            error: None,
            timestamp: 0,
            attempt: 1,
        }
    }

    #[test]
    fn records_survive_reopening_and_failures_are_not_hits() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        let good = record("a", Some(Parsed::Distribution(vec![0.5, 0.5])));
        cache.append(&good).unwrap();
        cache.append(&record("b", None)).unwrap();
        let reopened = Cache::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.get(&good.key), Some(&good));
        let lines: usize = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                std::fs::read_to_string(e.unwrap().path())
                    .unwrap()
                    .lines()
                    .count()
            })
            .sum();
        assert_eq!(lines, 2);
    }
}
