//! Content-addressed on-disk cache for remote responses and extracted frames.
//!
//! Layout under the cache root:
//! - `responses/<sha256-of-canonical-request>.json` — raw response payloads
//! - `frames/<video_hash>/<policy_tag>/NNNNN.jpg` — extracted frames (written
//!   by the sampler; counted here for stats and clearing)
//!
//! Writes go through a temp file plus atomic rename, so concurrent writers of
//! the same key are safe: one wins, the others overwrite with identical bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Handle to a cache root directory.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

/// Entry counts and byte sizes, split by cache section.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct CacheStats {
    pub response_entries: u64,
    pub response_bytes: u64,
    pub frame_files: u64,
    pub frame_bytes: u64,
}

impl CacheStats {
    pub fn total_entries(&self) -> u64 {
        self.response_entries + self.frame_files
    }

    pub fn total_bytes(&self) -> u64 {
        self.response_bytes + self.frame_bytes
    }
}

impl ResponseCache {
    /// Open (creating if needed) a cache rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("responses"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Directory the sampler stores extracted frames under.
    pub fn frames_dir(&self) -> PathBuf {
        self.root.join("frames")
    }

    fn response_path(&self, key: &str) -> PathBuf {
        self.root.join("responses").join(format!("{key}.json"))
    }

    /// Fetch a cached response payload by digest key.
    pub fn get(&self, key: &str) -> Option<Vec<u8>> {
        fs::read(self.response_path(key)).ok()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.response_path(key).exists()
    }

    /// Store a response payload under its digest key (atomic rename-into-place).
    pub fn put(&self, key: &str, payload: &[u8]) -> io::Result<()> {
        let final_path = self.response_path(key);
        let tmp = final_path.with_extension(format!("tmp.{}", std::process::id()));
        fs::write(&tmp, payload)?;
        fs::rename(&tmp, &final_path)
    }

    /// Count entries and bytes in both cache sections.
    pub fn stats(&self) -> io::Result<CacheStats> {
        let mut stats = CacheStats::default();
        let responses = self.root.join("responses");
        if responses.is_dir() {
            for entry in fs::read_dir(&responses)? {
                let entry = entry?;
                if entry.file_type()?.is_file() {
                    stats.response_entries += 1;
                    stats.response_bytes += entry.metadata()?.len();
                }
            }
        }
        let frames = self.frames_dir();
        if frames.is_dir() {
            walk_files(&frames, &mut |meta| {
                stats.frame_files += 1;
                stats.frame_bytes += meta.len();
            })?;
        }
        Ok(stats)
    }

    /// Remove every cached entry, keeping the root usable.
    pub fn clear(&self) -> io::Result<()> {
        for section in ["responses", "frames"] {
            let dir = self.root.join(section);
            if dir.is_dir() {
                fs::remove_dir_all(&dir)?;
            }
        }
        fs::create_dir_all(self.root.join("responses"))
    }
}

fn walk_files(dir: &Path, visit: &mut dyn FnMut(fs::Metadata)) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let ty = entry.file_type()?;
        if ty.is_dir() {
            walk_files(&entry.path(), visit)?;
        } else if ty.is_file() {
            visit(entry.metadata()?);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = crate::digest::sha256_hex(b"req");
        assert!(cache.get(&key).is_none());
        cache.put(&key, b"{\"caption\":\"x\"}").unwrap();
        assert_eq!(cache.get(&key).unwrap(), b"{\"caption\":\"x\"}");
        assert!(cache.contains(&key));
    }

    #[test]
    fn stats_and_clear() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.stats().unwrap().total_entries(), 0);

        cache.put("aa", b"12345").unwrap();
        let frame_dir = cache.frames_dir().join("hash").join("fps_1");
        fs::create_dir_all(&frame_dir).unwrap();
        fs::write(frame_dir.join("00000.jpg"), b"img").unwrap();

        let stats = cache.stats().unwrap();
        assert_eq!(stats.response_entries, 1);
        assert_eq!(stats.response_bytes, 5);
        assert_eq!(stats.frame_files, 1);
        assert_eq!(stats.frame_bytes, 3);

        cache.clear().unwrap();
        assert_eq!(cache.stats().unwrap().total_entries(), 0);
        // still usable after clear
        cache.put("bb", b"x").unwrap();
        assert!(cache.contains("bb"));
    }
}
