//! Content-addressed on-disk cache for pipeline stages.
//!
//! Layout: `<root>/<stage>/<key hash>/<payload file>` plus `manifest.json`.
//! The key hash covers input file digests, the stage configuration and the
//! keys of upstream stages, so any change upstream is a cache miss.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cache payload could not be encoded or decoded: {0}")]
    Codec(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.to_path_buf(), source }
}

/// Data a stage can persist.
pub trait StagePayload: Sized {
    const FILE_NAME: &'static str;
    fn encode(&self) -> Result<Vec<u8>, CacheError>;
    fn decode(bytes: &[u8]) -> Result<Self, CacheError>;
    fn row_count(&self) -> usize;
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, CacheError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

/// Everything that determines a stage's output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageKey {
    pub input_digests: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub upstream: Vec<String>,
}

impl StageKey {
    pub fn new(config: serde_json::Value) -> Self {
        StageKey { config, ..Default::default() }
    }

    pub fn with_input(mut self, name: impl Into<String>, digest: impl Into<String>) -> Self {
        self.input_digests.insert(name.into(), digest.into());
        self
    }

    pub fn with_upstream(mut self, hash: impl Into<String>) -> Self {
        self.upstream.push(hash.into());
        self
    }

    pub fn hash(&self, stage: &str) -> String {
        let canonical = serde_json::to_vec(&(stage, self)).expect("stage key serializes");
        sha256_hex(&canonical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub key_hash: String,
    pub key: StageKey,
    pub payload_file: String,
    pub payload_sha256: String,
    pub row_count: usize,
    pub created_unix: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Computed,
    /// An entry existed but failed verification and was overwritten.
    Recomputed,
}

#[derive(Debug, Default)]
pub struct CacheStats {
    pub hits: AtomicUsize,
    pub computed: AtomicUsize,
    pub recomputed: AtomicUsize,
}

#[derive(Debug)]
pub struct StageCache {
    root: PathBuf,
    stats: CacheStats,
}

enum Lookup<T> {
    Found(T),
    Absent,
    Invalid(String),
}

impl StageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StageCache { root: root.into(), stats: CacheStats::default() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn entry_dir(&self, stage: &str, key: &StageKey) -> PathBuf {
        self.root.join(stage).join(key.hash(stage))
    }

    fn lookup<T: StagePayload>(&self, stage: &str, key: &StageKey) -> Lookup<T> {
        let dir = self.entry_dir(stage, key);
        let manifest_path = dir.join("manifest.json");
        let Ok(raw) = fs::read(&manifest_path) else {
            return Lookup::Absent;
        };
        let manifest: Manifest = match serde_json::from_slice(&raw) {
            Ok(m) => m,
            Err(e) => return Lookup::Invalid(format!("unreadable manifest: {e}")),
        };
        if manifest.key_hash != key.hash(stage) {
            return Lookup::Invalid("manifest key hash mismatch".into());
        }
        let Ok(payload) = fs::read(dir.join(T::FILE_NAME)) else {
            return Lookup::Invalid("payload missing".into());
        };
        if sha256_hex(&payload) != manifest.payload_sha256 {
            return Lookup::Invalid("payload digest mismatch".into());
        }
        match T::decode(&payload) {
            Ok(v) => Lookup::Found(v),
            Err(e) => Lookup::Invalid(e.to_string()),
        }
    }

    /// Loads a verified entry if one exists.
    pub fn load<T: StagePayload>(&self, stage: &str, key: &StageKey) -> Option<T> {
        match self.lookup(stage, key) {
            Lookup::Found(v) => {
                self.stats.hits.fetch_add(1, Ordering::Relaxed);
                Some(v)
            }
            _ => None,
        }
    }

    /// Returns the cached value for `key`, or runs `producer` and stores its result.
    pub fn stage<T, E, F>(&self, stage: &str, key: &StageKey, producer: F) -> Result<(T, CacheOutcome), E>
    where
        T: StagePayload,
        E: From<CacheError>,
        F: FnOnce() -> Result<T, E>,
    {
        let invalid = match self.lookup::<T>(stage, key) {
            Lookup::Found(v) => {
                self.stats.hits.fetch_add(1, Ordering::Relaxed);
                return Ok((v, CacheOutcome::Hit));
            }
            Lookup::Absent => false,
            Lookup::Invalid(reason) => {
                log::warn!("cache entry for stage `{stage}` is invalid ({reason}); recomputing");
                true
            }
        };
        let value = producer()?;
        self.store(stage, key, &value)?;
        let outcome = if invalid {
            self.stats.recomputed.fetch_add(1, Ordering::Relaxed);
            CacheOutcome::Recomputed
        } else {
            self.stats.computed.fetch_add(1, Ordering::Relaxed);
            CacheOutcome::Computed
        };
        Ok((value, outcome))
    }

    /// Writes payload then manifest, each through a temp file and rename.
    pub fn store<T: StagePayload>(&self, stage: &str, key: &StageKey, value: &T) -> Result<(), CacheError> {
        let dir = self.entry_dir(stage, key);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() {
            fs::remove_file(&manifest_path).map_err(io_err(&manifest_path))?;
        }
        let payload = value.encode()?;
        write_atomic(&dir.join(T::FILE_NAME), &payload)?;
        let manifest = Manifest {
            stage: stage.to_string(),
            key_hash: key.hash(stage),
            key: key.clone(),
            payload_file: T::FILE_NAME.to_string(),
            payload_sha256: sha256_hex(&payload),
            row_count: value.row_count(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CacheError::Codec(e.to_string()))?;
        write_atomic(&manifest_path, &bytes)
    }
}

static TMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CacheError> {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp-{}-{n}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// JSON payload for any serde type.
#[derive(Debug, Clone, PartialEq)]
pub struct Json<T>(pub T);

impl<T: Serialize + serde::de::DeserializeOwned> StagePayload for Json<T> {
    const FILE_NAME: &'static str = "data.json";

    fn encode(&self) -> Result<Vec<u8>, CacheError> {
        serde_json::to_vec(&self.0).map_err(|e| CacheError::Codec(e.to_string()))
    }

    fn decode(bytes: &[u8]) -> Result<Self, CacheError> {
        serde_json::from_slice(bytes).map(Json).map_err(|e| CacheError::Codec(e.to_string()))
    }

    fn row_count(&self) -> usize {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[derive(Debug, PartialEq)]
    struct Lines(Vec<String>);

    impl StagePayload for Lines {
        const FILE_NAME: &'static str = "data.csv";
        fn encode(&self) -> Result<Vec<u8>, CacheError> {
            Ok(format!("value\n{}\n", self.0.join("\n")).into_bytes())
        }
        fn decode(bytes: &[u8]) -> Result<Self, CacheError> {
            let s = std::str::from_utf8(bytes).map_err(|e| CacheError::Codec(e.to_string()))?;
            let mut it = s.lines();
            if it.next() != Some("value") {
                return Err(CacheError::Codec("bad header".into()));
            }
            Ok(Lines(it.map(str::to_string).collect()))
        }
        fn row_count(&self) -> usize {
            self.0.len()
        }
    }

    fn key(rate: f64) -> StageKey {
        StageKey::new(serde_json::json!({ "sampling_rate": rate })).with_input("roads", "abc")
    }

    #[test]
    fn second_call_is_a_hit_and_config_change_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StageCache::new(dir.path());
        let runs = Cell::new(0);
        let produce = || -> Result<Lines, CacheError> {
            runs.set(runs.get() + 1);
            Ok(Lines(vec!["a".into(), "b".into()]))
        };
        let (v, o) = cache.stage("sample", &key(0.001), produce).unwrap();
        assert_eq!(o, CacheOutcome::Computed);
        assert_eq!(v.0.len(), 2);
        let (_, o) = cache.stage("sample", &key(0.001), produce).unwrap();
        assert_eq!(o, CacheOutcome::Hit);
        assert_eq!(runs.get(), 1);
        let (_, o) = cache.stage("sample", &key(0.002), produce).unwrap();
        assert_eq!(o, CacheOutcome::Computed);
        assert_eq!(runs.get(), 2);

        let manifest: Manifest =
            serde_json::from_slice(&fs::read(cache.entry_dir("sample", &key(0.001)).join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest.row_count, 2);
        assert_eq!(manifest.key.input_digests["roads"], "abc");
    }

    #[test]
    fn truncated_payload_is_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StageCache::new(dir.path());
        let produce = || -> Result<Lines, CacheError> { Ok(Lines(vec!["x".into(); 10])) };
        cache.stage("s", &key(1.0), produce).unwrap();
        let payload = cache.entry_dir("s", &key(1.0)).join("data.csv");
        let bytes = fs::read(&payload).unwrap();
        fs::write(&payload, &bytes[..bytes.len() / 2]).unwrap();
        let (v, o) = cache.stage("s", &key(1.0), produce).unwrap();
        assert_eq!(o, CacheOutcome::Recomputed);
        assert_eq!(v.0.len(), 10);
        let (_, o) = cache.stage("s", &key(1.0), produce).unwrap();
        assert_eq!(o, CacheOutcome::Hit);
    }

    #[test]
    fn key_hash_depends_on_every_part() {
        let base = key(1.0);
        assert_ne!(base.hash("a"), base.hash("b"));
        assert_ne!(base.hash("a"), base.clone().with_upstream("u").hash("a"));
        assert_ne!(base.hash("a"), base.clone().with_input("roads", "abd").hash("a"));
    }
}
