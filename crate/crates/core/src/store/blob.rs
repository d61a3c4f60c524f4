use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use super::{digest_hex, validate_key, write_atomic, BlobRef, MediaKind, Result, StoreError};

/// Storage contract for immutable, content-addressed blobs.
pub trait BlobStore: Send + Sync {
    fn put_blob(&self, bytes: &[u8], media_kind: MediaKind) -> Result<BlobRef>;
    fn get_blob(&self, key: &str) -> Result<Vec<u8>>;
    fn contains(&self, key: &str) -> bool;
}

/// Filesystem backend with layout `blobs/<first2hex>/<key>`.
#[derive(Debug, Clone)]
pub struct FsBlobStore {
    root: PathBuf,
}

impl FsBlobStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().join("blobs");
        fs::create_dir_all(&root)?;
        Ok(FsBlobStore { root })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(key)
    }
}

impl BlobStore for FsBlobStore {
    fn put_blob(&self, bytes: &[u8], media_kind: MediaKind) -> Result<BlobRef> {
        if bytes.is_empty() {
            return Err(StoreError::EmptyBlob);
        }
        let blob = BlobRef::of(bytes, media_kind);
        let path = self.path_for(&blob.key);
        // Concurrent writers of the same key race to rename identical bytes.
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(blob)
    }

    fn get_blob(&self, key: &str) -> Result<Vec<u8>> {
        validate_key(key)?;
        let bytes = match fs::read(self.path_for(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                return Err(StoreError::NotFound(key.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        if digest_hex(&bytes) != key {
            return Err(StoreError::Corrupt(key.to_string()));
        }
        Ok(bytes)
    }

    fn contains(&self, key: &str) -> bool {
        validate_key(key).is_ok() && self.path_for(key).is_file()
    }
}
