//! Content-addressed response cache: one JSON file per request digest,
//! sharded by the first two hex characters. Reads are lock-free; writes are
//! serialized and land through temp file + rename.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::jsonl::write_atomic;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    #[default]
    Use,
    Bypass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_hash: String,
    pub response_payload: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub provider_id: String,
}

impl CacheEntry {
    pub fn new(request_hash: String, response_payload: String, provider_id: String) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        CacheEntry {
            request_hash,
            response_payload,
            created_at,
            provider_id,
        }
    }
}

#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(ResponseCache {
            root: root.as_ref().to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        let shard = hash.get(..2).unwrap_or("00");
        self.root.join(shard).join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Result<Option<CacheEntry>> {
        let path = self.path_for(hash);
        match fs::read(&path) {
            Ok(bytes) => match serde_json::from_slice::<CacheEntry>(&bytes) {
                Ok(entry) if entry.request_hash == hash => Ok(Some(entry)),
                // corrupt or foreign file: treat as a miss, it will be overwritten
                _ => Ok(None),
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let bytes = serde_json::to_vec(entry)?;
        write_atomic(&self.path_for(&entry.request_hash), &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert!(cache.get("abcd").unwrap().is_none());
        let e = CacheEntry::new("abcd".into(), "payload \u{1F600}".into(), "mock".into());
        cache.put(&e).unwrap();
        assert_eq!(cache.get("abcd").unwrap(), Some(e));
        assert!(dir.path().join("ab").join("abcd.json").exists());
    }
}
