//! Fixture-driven backend: a pure function of (agent kind, payload digest,
//! seed, attempt).
//!
//! Fixture layout: `<agent_kind>/<digest>-<seed>.resp`, where `digest` is the
//! first 16 hex characters of the SHA-256 of the user payload. A repair
//! re-prompt `n` first looks for `<digest>-<seed>.repair<n>.resp` and falls
//! back to the base file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use futures::future::{BoxFuture, FutureExt};

use super::backend::{BackendCall, BackendError, ChatBackend, RawCompletion};
use super::AgentKind;
use crate::hashing::short_digest;

/// Relative fixture path for a call.
pub fn fixture_key(kind: AgentKind, user_payload: &str, seed: u64, attempt: u32) -> String {
    let digest = short_digest(user_payload, 16);
    if attempt == 0 {
        format!("{}/{digest}-{seed}.resp", kind.as_str())
    } else {
        format!("{}/{digest}-{seed}.repair{attempt}.resp", kind.as_str())
    }
}

enum Source {
    Dir(PathBuf),
    Map(HashMap<String, String>),
}

pub struct MockBackend {
    source: Source,
    delay: Duration,
}

impl MockBackend {
    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            source: Source::Dir(dir.into()),
            delay: Duration::ZERO,
        }
    }

    /// In-memory fixtures keyed exactly like the directory layout.
    pub fn from_map(map: HashMap<String, String>) -> Self {
        Self {
            source: Source::Map(map),
            delay: Duration::ZERO,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    fn lookup(&self, key: &str) -> Option<String> {
        match &self.source {
            Source::Dir(d) => std::fs::read_to_string(d.join(key)).ok(),
            Source::Map(m) => m.get(key).cloned(),
        }
    }
}

impl ChatBackend for MockBackend {
    fn chat<'a>(&'a self, call: &'a BackendCall) -> BoxFuture<'a, Result<RawCompletion, BackendError>> {
        async move {
            if !self.delay.is_zero() {
                tokio::time::sleep(self.delay).await;
            }
            let base = fixture_key(call.agent_kind, &call.user_payload, call.seed, 0);
            let text = if call.attempt > 0 {
                let repair = fixture_key(call.agent_kind, &call.user_payload, call.seed, call.attempt);
                self.lookup(&repair).or_else(|| self.lookup(&base))
            } else {
                self.lookup(&base)
            };
            text.map(|text| RawCompletion { text, usage: None })
                .ok_or_else(|| BackendError::Unavailable(format!("no mock fixture for key `{base}`")))
        }
        .boxed()
    }
}

/// Backend answering through a closure; used by tests and fixture recording.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&BackendCall) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&BackendCall) -> Result<String, BackendError> + Send + Sync,
{
    fn chat<'a>(&'a self, call: &'a BackendCall) -> BoxFuture<'a, Result<RawCompletion, BackendError>> {
        let out = (self.f)(call).map(|text| RawCompletion { text, usage: None });
        futures::future::ready(out).boxed()
    }
}

/// Wraps a backend and writes every response into a fixture directory that
/// [`MockBackend::from_dir`] can replay.
pub struct RecordingBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn chat<'a>(&'a self, call: &'a BackendCall) -> BoxFuture<'a, Result<RawCompletion, BackendError>> {
        async move {
            let raw = self.inner.chat(call).await?;
            let path = self
                .dir
                .join(fixture_key(call.agent_kind, &call.user_payload, call.seed, call.attempt));
            let write = || -> std::io::Result<()> {
                std::fs::create_dir_all(path.parent().expect("fixture path has parent"))?;
                std::fs::write(&path, &raw.text)
            };
            write().map_err(|e| BackendError::Unavailable(format!("recording {}: {e}", path.display())))?;
            Ok(raw)
        }
        .boxed()
    }
}
