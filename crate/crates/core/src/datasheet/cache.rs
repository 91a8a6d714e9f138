//! On-disk specification cache with a seven-day TTL.
//!
//! One JSON file per (part number, source URL), named by the SHA-256 of
//! `"{part}\n{url}"`:
//!
//! ```json
//! {"schema_version": 1, "part": "TPS54331", "source_url": "...",
//!  "stored_at": 1760000000, "spec_xml": "<datasheet ...>", "score": {...}}
//! ```
//!
//! `stored_at` is Unix seconds. Expired entries are removed when looked up;
//! unreadable or foreign-version entries count as misses.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::spec_xml::{parse_spec_xml, serialize_spec_xml};
use super::{CriticScore, DatasheetError, DatasheetSpec};
use crate::hashing::sha256_hex;

pub const CACHE_TTL_SECS: u64 = 604_800;
pub const CACHE_SCHEMA_VERSION: u32 = 1;

pub trait Clock: Send + Sync {
    fn now_unix(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_unix(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub part: String,
    pub source_url: String,
    pub spec: DatasheetSpec,
    pub score: CriticScore,
    pub stored_at: u64,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    schema_version: u32,
    part: String,
    source_url: String,
    stored_at: u64,
    spec_xml: String,
    score: CriticScore,
}

#[derive(Clone)]
pub struct SpecCache {
    dir: PathBuf,
    clock: Arc<dyn Clock>,
}

fn io(path: &Path, e: impl std::fmt::Display) -> DatasheetError {
    DatasheetError::StoreIo(format!("{}: {e}", path.display()))
}

impl SpecCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self::with_clock(dir, Arc::new(SystemClock))
    }

    pub fn with_clock(dir: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Self {
        Self {
            dir: dir.into(),
            clock,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn now(&self) -> u64 {
        self.clock.now_unix()
    }

    pub fn entry_path(&self, part: &str, url: &str) -> PathBuf {
        self.dir.join(format!("{}.json", sha256_hex(format!("{part}\n{url}"))))
    }

    pub fn is_fresh(stored_at: u64, now: u64) -> bool {
        now.saturating_sub(stored_at) < CACHE_TTL_SECS
    }

    pub fn lookup(&self, part: &str, url: &str) -> Result<Option<CacheEntry>, DatasheetError> {
        let path = self.entry_path(part, url);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io(&path, e)),
        };
        let file: EntryFile = match serde_json::from_str(&text) {
            Ok(f) => f,
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "ignoring unreadable cache entry");
                return Ok(None);
            }
        };
        if file.schema_version != CACHE_SCHEMA_VERSION || file.part != part || file.source_url != url {
            return Ok(None);
        }
        if !Self::is_fresh(file.stored_at, self.now()) {
            match std::fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(io(&path, e)),
            }
            return Ok(None);
        }
        let spec = match parse_spec_xml(&file.spec_xml) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "ignoring cache entry with bad spec");
                return Ok(None);
            }
        };
        let s = file.score;
        Ok(Some(CacheEntry {
            part: file.part,
            source_url: file.source_url,
            spec,
            score: CriticScore::new(
                s.feature_completeness,
                s.pin_function_coverage,
                s.application_information,
                s.typical_application_circuits,
            ),
            stored_at: file.stored_at,
        }))
    }

    /// Writes (or overwrites) an entry. The file is written beside its final
    /// name and renamed into place so concurrent readers never see a torn file.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), DatasheetError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        let path = self.entry_path(&entry.part, &entry.source_url);
        let file = EntryFile {
            schema_version: CACHE_SCHEMA_VERSION,
            part: entry.part.clone(),
            source_url: entry.source_url.clone(),
            stored_at: entry.stored_at,
            spec_xml: serialize_spec_xml(&entry.spec),
            score: entry.score,
        };
        let body = serde_json::to_string_pretty(&file).map_err(|e| io(&path, e))?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, body).map_err(|e| io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))
    }
}
