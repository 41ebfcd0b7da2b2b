use spurfinder_core::ContentHash;
use spurfinder_store::BlobStore;

/// Where generated images are persisted before `generate` returns.
pub trait BlobSink: Send + Sync {
    fn put(&self, png: &[u8]) -> Result<ContentHash, String>;
}

impl BlobSink for BlobStore {
    fn put(&self, png: &[u8]) -> Result<ContentHash, String> {
        BlobStore::put(self, png).map_err(|e| e.to_string())
    }
}
