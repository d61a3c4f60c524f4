use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{validate_id, LockGuard, Result, StoreError};

/// One line of a dataset file. Schema-specific fields are flattened next to
/// the two identity fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub record_id: String,
    pub description_id: String,
    #[serde(flatten)]
    pub fields: BTreeMap<String, Value>,
}

impl DatasetRecord {
    pub fn new(record_id: impl Into<String>, description_id: impl Into<String>) -> Self {
        DatasetRecord {
            record_id: record_id.into(),
            description_id: description_id.into(),
            fields: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Result<Self> {
        self.fields.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(self)
    }

    /// Deserializes one field, `None` when absent or null.
    pub fn get<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.fields.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => Ok(Some(serde_json::from_value(v.clone())?)),
        }
    }
}

#[derive(Debug, Default)]
struct IdCache {
    offset: u64,
    ids: HashSet<String>,
}

/// Append-only JSON Lines dataset at `<root>/datasets/<name>.jsonl`.
#[derive(Debug)]
pub struct Dataset {
    path: PathBuf,
    lock_path: PathBuf,
    cache: Mutex<IdCache>,
}

impl Dataset {
    /// `name` may contain `/`-separated segments, e.g. `iterations/003/scored`.
    pub fn open(root: impl AsRef<Path>, name: &str) -> Result<Self> {
        let mut path = root.as_ref().join("datasets");
        for segment in name.split('/') {
            validate_id(segment)?;
            path.push(segment);
        }
        let lock_path = path.with_extension("lock");
        let path = path.with_extension("jsonl");
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(Dataset {
            path,
            lock_path,
            cache: Mutex::new(IdCache::default()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Brings the id cache up to date with bytes other writers appended.
    fn refresh(&self, cache: &mut IdCache) -> Result<()> {
        let mut file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        file.seek(SeekFrom::Start(cache.offset))?;
        let mut tail = String::new();
        file.read_to_string(&mut tail)?;
        // only consume complete lines
        let consumed = tail.rfind('\n').map(|i| i + 1).unwrap_or(0);
        for line in tail[..consumed].lines().filter(|l| !l.trim().is_empty()) {
            let record: DatasetRecord = serde_json::from_str(line)?;
            cache.ids.insert(record.record_id);
        }
        cache.offset += consumed as u64;
        Ok(())
    }

    fn append_locked(&self, record: &DatasetRecord, cache: &mut IdCache) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        file.write_all(&line)?;
        file.sync_data()?;
        cache.ids.insert(record.record_id.clone());
        cache.offset += line.len() as u64;
        Ok(())
    }

    /// Appends a record; a repeated `record_id` is an error.
    pub fn append(&self, record: &DatasetRecord) -> Result<()> {
        if !self.append_if_absent(record)? {
            return Err(StoreError::DuplicateRecord(record.record_id.clone()));
        }
        Ok(())
    }

    /// Appends unless a record with the same id exists; returns whether it
    /// was written.
    pub fn append_if_absent(&self, record: &DatasetRecord) -> Result<bool> {
        let _guard = LockGuard::acquire(&self.lock_path)?;
        let mut cache = self.cache.lock().expect("dataset cache poisoned");
        self.refresh(&mut cache)?;
        if cache.ids.contains(&record.record_id) {
            return Ok(false);
        }
        self.append_locked(record, &mut cache)?;
        Ok(true)
    }

    pub fn contains(&self, record_id: &str) -> Result<bool> {
        let _guard = LockGuard::acquire(&self.lock_path)?;
        let mut cache = self.cache.lock().expect("dataset cache poisoned");
        self.refresh(&mut cache)?;
        Ok(cache.ids.contains(record_id))
    }

    /// All records in append order.
    pub fn read_all(&self) -> Result<Vec<DatasetRecord>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }
}
