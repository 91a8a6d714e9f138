#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use futures::future::{BoxFuture, FutureExt};
use schemrev_core::datasheet::{DatasheetError, Fetcher};
use schemrev_core::pipeline::RunConfig;

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

/// The demo config with cache, output and trace redirected under `tmp`.
pub fn demo_config(tmp: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&demo_dir().join("config.toml")).expect("demo config loads");
    cfg.cache_dir = tmp.join("cache");
    cfg.out_dir = tmp.join("out");
    cfg.trace_out = Some(tmp.join("trace.ndjson"));
    cfg
}

/// In-memory fetcher that counts fetches per URL.
#[derive(Default)]
pub struct MemFetcher {
    docs: Mutex<HashMap<String, Vec<u8>>>,
    failing: Mutex<HashSet<String>>,
    delay: Duration,
    total: AtomicUsize,
    per_url: Mutex<HashMap<String, usize>>,
}

impl MemFetcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_delay(delay: Duration) -> Self {
        Self {
            delay,
            ..Self::default()
        }
    }

    pub fn insert(&self, url: impl Into<String>, body: impl Into<Vec<u8>>) {
        self.docs.lock().unwrap().insert(url.into(), body.into());
    }

    pub fn fail(&self, url: impl Into<String>) {
        self.failing.lock().unwrap().insert(url.into());
    }

    pub fn total(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }

    pub fn count(&self, url: &str) -> usize {
        self.per_url.lock().unwrap().get(url).copied().unwrap_or(0)
    }
}

impl Fetcher for MemFetcher {
    fn fetch<'a>(&'a self, url: &'a str) -> BoxFuture<'a, Result<Vec<u8>, DatasheetError>> {
        async move {
            self.total.fetch_add(1, Ordering::SeqCst);
            *self.per_url.lock().unwrap().entry(url.to_string()).or_default() += 1;
            if !self.delay.is_zero() {
                tokio::time::sleep(self.delay).await;
            }
            let failed = |detail: &str| DatasheetError::FetchFailed {
                url: url.to_string(),
                detail: detail.to_string(),
            };
            if self.failing.lock().unwrap().contains(url) {
                return Err(failed("503 service unavailable"));
            }
            self.docs.lock().unwrap().get(url).cloned().ok_or_else(|| failed("404 not found"))
        }
        .boxed()
    }
}

/// Reads a named string field from an agent payload.
pub fn payload_field(payload: &str, field: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(payload).expect("payloads are JSON");
    v[field].as_str().unwrap_or_default().to_string()
}

/// Regular files under `dir`, relative path to bytes.
pub fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
