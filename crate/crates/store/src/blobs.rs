use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use spurfinder_core::ContentHash;

use crate::error::StoreError;
use crate::fault::CrashPlan;

/// Content-addressed PNG store under `blobs/<2-hex>/<hash>.png`.
#[derive(Debug, Clone)]
pub struct BlobStore {
    dir: PathBuf,
    crash: Option<CrashPlan>,
}

impl BlobStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        BlobStore {
            dir: dir.into(),
            crash: None,
        }
    }

    pub(crate) fn with_crash_plan(mut self, plan: Option<CrashPlan>) -> Self {
        self.crash = plan;
        self
    }

    pub fn path_of(&self, hash: &ContentHash) -> PathBuf {
        let hex = hash.to_hex();
        self.dir.join(&hex[..2]).join(format!("{hex}.png"))
    }

    pub fn contains(&self, hash: &ContentHash) -> bool {
        self.path_of(hash).is_file()
    }

    /// Stores `bytes` unless an identical blob is already present.
    pub fn put(&self, bytes: &[u8]) -> Result<ContentHash, StoreError> {
        let hash = ContentHash::of(bytes);
        let path = self.path_of(&hash);
        if path.is_file() && self.get(&hash).is_ok() {
            return Ok(hash);
        }
        let parent = path.parent().expect("blob path has a parent");
        fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
        let tmp = path.with_extension("png.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
        if let Some(n) = self.crash.as_ref().and_then(CrashPlan::tick) {
            let _ = f.write_all(&bytes[..bytes.len() / 2]);
            return Err(StoreError::InjectedCrash(n));
        }
        f.write_all(bytes).map_err(|e| StoreError::io(&tmp, e))?;
        f.sync_data().map_err(|e| StoreError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| StoreError::io(&path, e))?;
        Ok(hash)
    }

    /// Reads a blob and verifies its hash.
    pub fn get(&self, hash: &ContentHash) -> Result<Vec<u8>, StoreError> {
        let path = self.path_of(hash);
        let bytes = read_existing(&path, hash)?;
        let actual = ContentHash::of(&bytes);
        if &actual != hash {
            return Err(StoreError::HashMismatch {
                expected: hash.to_hex(),
                actual: actual.to_hex(),
            });
        }
        Ok(bytes)
    }
}

fn read_existing(path: &Path, hash: &ContentHash) -> Result<Vec<u8>, StoreError> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(StoreError::MissingBlob(hash.to_hex()))
        }
        Err(e) => Err(StoreError::io(path, e)),
    }
}
