use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest as _, Sha256};

/// Hex SHA-256 over length-prefixed parts, so `["ab", "c"]` and
/// `["a", "bc"]` differ.
pub fn digest<T: AsRef<[u8]>>(parts: &[T]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        let p = p.as_ref();
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Append-only store of stage outputs keyed by the digest of their inputs.
/// Files are published by renaming a finished temp file into place.
#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
    /// Recompute and overwrite instead of reading existing entries.
    pub force: bool,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), force: false }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(key)
    }

    pub fn get(&self, stage: &str, key: &str) -> Option<String> {
        if self.force {
            return None;
        }
        fs::read_to_string(self.path(stage, key)).ok()
    }

    pub fn put(&self, stage: &str, key: &str, content: &str) -> io::Result<PathBuf> {
        let dir = self.root.join(stage);
        fs::create_dir_all(&dir)?;
        let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content.as_bytes())?;
            f.sync_all()?;
        }
        let dest = dir.join(key);
        fs::rename(&tmp, &dest)?;
        Ok(dest)
    }

    /// Cached value for `key`, computing and publishing it on a miss.
    pub fn get_or_compute<E>(
        &self,
        stage: &str,
        key: &str,
        compute: impl FnOnce() -> Result<String, E>,
    ) -> Result<String, E>
    where
        E: From<io::Error>,
    {
        if let Some(hit) = self.get(stage, key) {
            log::debug!("cache hit {stage}/{key}");
            return Ok(hit);
        }
        let value = compute()?;
        self.put(stage, key, &value)?;
        Ok(value)
    }
}
