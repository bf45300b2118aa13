//! Content-addressed on-disk cache for span scores.
//!
//! The cache key digests the backend identity, the full scored text, and the
//! span layout, so any change to model, prompt, or spans lands in a different
//! entry. Entries are versioned JSON files sharded by the first two digest
//! characters; a corrupted or version-skewed entry is treated as a miss with
//! a warning, never an error. Reads are lock-free; writes go through a
//! process-local mutex and an atomic rename so concurrent readers only ever
//! see complete entries.

use super::{BackendError, LabeledSpan, ScoreBackend, ScoringRequest, SpanScores};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    version: u32,
    scores: SpanScores,
}

/// What uniquely determines a span-score result.
#[derive(Debug, Clone, Copy)]
pub struct CacheKey<'a> {
    pub backend_identity: &'a str,
    pub full_text: &'a str,
    pub spans: &'a [LabeledSpan],
}

impl CacheKey<'_> {
    fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            backend: &'a str,
            text: &'a str,
            spans: Vec<(&'a str, usize, usize)>,
        }
        let canonical = Canonical {
            backend: self.backend_identity,
            text: self.full_text,
            spans: self
                .spans
                .iter()
                .map(|s| (s.label.as_str(), s.range.start, s.range.end))
                .collect(),
        };
        let bytes = serde_json::to_vec(&canonical).expect("cache key serialization");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub struct ScoreCache {
    dir: PathBuf,
    write_lock: Mutex<u64>,
}

impl ScoreCache {
    /// Opens (and if needed creates) a cache directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| BackendError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(ScoreCache {
            dir,
            write_lock: Mutex::new(0),
        })
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(&digest[..2]).join(format!("{}.json", &digest[2..]))
    }

    /// Returns the cached scores for `key`, or `None` on a miss. Unreadable
    /// or version-skewed entries count as misses and log a warning.
    pub fn get(&self, key: &CacheKey) -> Option<SpanScores> {
        let path = self.entry_path(&key.digest());
        let bytes = match std::fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cache entry {} unreadable: {e}", path.display());
                return None;
            }
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.version == CACHE_VERSION => Some(entry.scores),
            Ok(entry) => {
                log::warn!(
                    "cache entry {} has version {}, expected {CACHE_VERSION}; ignoring",
                    path.display(),
                    entry.version
                );
                None
            }
            Err(e) => {
                log::warn!("cache entry {} corrupted: {e}; ignoring", path.display());
                None
            }
        }
    }

    /// Stores `scores` under `key`, atomically replacing any existing entry.
    pub fn put(&self, key: &CacheKey, scores: &SpanScores) -> Result<(), BackendError> {
        let path = self.entry_path(&key.digest());
        let io = |p: &Path, e: std::io::Error| BackendError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        let parent = path.parent().expect("entry path has a shard directory");
        std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        let entry = CacheEntry {
            version: CACHE_VERSION,
            scores: scores.clone(),
        };
        let body = serde_json::to_vec(&entry).expect("cache entry serialization");
        let mut serial = self.write_lock.lock().unwrap();
        *serial += 1;
        let tmp = parent.join(format!(".tmp-{}-{serial}", std::process::id()));
        std::fs::write(&tmp, &body).map_err(|e| io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))?;
        Ok(())
    }
}

/// Wraps a backend with the score cache. Hits skip the inner backend
/// entirely; misses are scored and written back. Generation passes through
/// uncached.
pub struct CachedBackend<B> {
    inner: B,
    cache: ScoreCache,
    inner_calls: AtomicU64,
    hits: AtomicU64,
}

impl<B: ScoreBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: ScoreCache) -> Self {
        CachedBackend {
            inner,
            cache,
            inner_calls: AtomicU64::new(0),
            hits: AtomicU64::new(0),
        }
    }

    /// Number of score calls that reached the inner backend (cache misses).
    pub fn inner_score_calls(&self) -> u64 {
        self.inner_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }
}

impl<B: ScoreBackend> ScoreBackend for CachedBackend<B> {
    fn score_spans(&self, request: &ScoringRequest) -> Result<SpanScores, BackendError> {
        let identity = self.inner.identity();
        let key = CacheKey {
            backend_identity: &identity,
            full_text: &request.full_text,
            spans: &request.spans,
        };
        if let Some(scores) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(scores);
        }
        self.inner_calls.fetch_add(1, Ordering::SeqCst);
        let scores = self.inner.score_spans(request)?;
        if let Err(e) = self.cache.put(&key, &scores) {
            log::warn!("failed to write cache entry: {e}");
        }
        Ok(scores)
    }

    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        self.inner.generate(prompt, max_new_tokens)
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}
