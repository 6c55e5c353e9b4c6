use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::ModelResponse;

/// Fingerprint-keyed response store consulted before any backend attempt.
pub trait ResponseCache: Send + Sync {
    fn get(&self, fingerprint: &str) -> Option<ModelResponse>;
    fn put(&self, fingerprint: &str, response: &ModelResponse);
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: RwLock<HashMap<String, ModelResponse>>,
}

impl ResponseCache for MemoryCache {
    fn get(&self, fingerprint: &str) -> Option<ModelResponse> {
        self.entries.read().expect("cache poisoned").get(fingerprint).cloned()
    }

    fn put(&self, fingerprint: &str, response: &ModelResponse) {
        self.entries
            .write()
            .expect("cache poisoned")
            .insert(fingerprint.to_owned(), response.clone());
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    fingerprint: String,
    digest: String,
    response: ModelResponse,
}

/// Content-addressed on-disk cache: `<dir>/<fp[..2]>/<fp>.json`.
///
/// Entries carry a digest of the response payload and are ignored when it
/// does not verify. Writes go to a temporary file and are renamed into place,
/// so concurrent writers of the same key never expose a torn file.
#[derive(Debug)]
pub struct FileCache {
    dir: PathBuf,
    seq: AtomicU64,
}

impl FileCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            seq: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, fingerprint: &str) -> PathBuf {
        let shard = fingerprint.get(..2).unwrap_or("__");
        self.dir.join(shard).join(format!("{fingerprint}.json"))
    }
}

impl ResponseCache for FileCache {
    fn get(&self, fingerprint: &str) -> Option<ModelResponse> {
        let path = self.path_for(fingerprint);
        let bytes = fs::read(&path).ok()?;
        let entry: CacheEntry = match serde_json::from_slice(&bytes) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                return None;
            }
        };
        if entry.fingerprint != fingerprint || entry.digest != entry.response.digest() {
            log::warn!("ignoring cache entry {} that fails verification", path.display());
            return None;
        }
        Some(entry.response)
    }

    fn put(&self, fingerprint: &str, response: &ModelResponse) {
        let path = self.path_for(fingerprint);
        let entry = CacheEntry {
            fingerprint: fingerprint.to_owned(),
            digest: response.digest(),
            response: response.clone(),
        };
        let result = (|| -> std::io::Result<()> {
            let parent = path.parent().expect("sharded path has a parent");
            fs::create_dir_all(parent)?;
            let tmp = parent.join(format!(
                ".{fingerprint}.{}.{}.tmp",
                std::process::id(),
                self.seq.fetch_add(1, Ordering::Relaxed)
            ));
            fs::write(&tmp, serde_json::to_vec_pretty(&entry)?)?;
            fs::rename(&tmp, &path)
        })();
        if let Err(e) = result {
            log::warn!("could not write cache entry {}: {e}", path.display());
        }
    }
}
