//! Shared storage used by every pipeline worker.
//!
//! Everything here is backed by the local filesystem and is safe to use from
//! several processes at once: blob writes go through temp-file-and-rename,
//! while queue and dataset mutations serialize on advisory file locks.

mod blob;
mod dataset;
mod queue;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use blob::{BlobStore, FsBlobStore};
pub use dataset::{Dataset, DatasetRecord};
pub use queue::{FsJobQueue, Job, JobKind, JobState};

/// Name of the digest used for blob keys. Recorded in iteration manifests.
pub const DIGEST_ALGORITHM: &str = "sha256";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed stored record: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("blob payload must be non-empty")]
    EmptyBlob,
    #[error("invalid key `{0}`")]
    InvalidKey(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("blob {0} failed its digest check")]
    Corrupt(String),
    #[error("record `{0}` already exists in dataset")]
    DuplicateRecord(String),
    #[error("job `{0}` is not currently leased")]
    NotLeased(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl StoreError {
    /// Retryable failures: the caller may repeat the operation unchanged.
    pub fn is_transient(&self) -> bool {
        matches!(self, StoreError::Io(_))
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    ProgramSource,
    RenderArtifact,
    Embedding,
    DatasetShard,
    JobPayload,
}

/// Handle to an immutable blob. The key is the hex SHA-256 of the bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlobRef {
    pub key: String,
    pub size_bytes: u64,
    pub media_kind: MediaKind,
}

impl BlobRef {
    /// Computes the reference a blob would get without storing it.
    pub fn of(bytes: &[u8], media_kind: MediaKind) -> Self {
        BlobRef {
            key: digest_hex(bytes),
            size_bytes: bytes.len() as u64,
            media_kind,
        }
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn validate_key(key: &str) -> Result<()> {
    if key.len() == 64 && key.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
        Ok(())
    } else {
        Err(StoreError::InvalidKey(key.to_string()))
    }
}

/// Identifiers used as file names: ASCII alphanumerics plus `-`, `_`, `.`.
pub(crate) fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidKey(id.to_string()))
    }
}

/// Millisecond wall clock, injectable so lease expiry can be tested.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Exclusive advisory lock held for the lifetime of the guard.
pub(crate) struct LockGuard(File);

impl LockGuard {
    pub(crate) fn acquire(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)?;
        file.lock()?;
        Ok(LockGuard(file))
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

/// Writes `bytes` to `path` via a sibling temp file and an atomic rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| StoreError::InvalidArgument(format!("no parent for {}", path.display())))?;
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_data()?;
    tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
    Ok(())
}
