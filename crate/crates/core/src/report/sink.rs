//! Comment delivery.
//!
//! File sink layout:
//!
//! ```text
//! <dir>/comments/<group_id>.md
//! <dir>/overlays/<group_id>.svg
//! <dir>/manifest.json      {"version": 1, "comments": [ManifestEntry...]}
//! <dir>/progress.ndjson    one ProgressEvent per line
//! ```
//!
//! HTTP sink: `POST {base_url}/comments` with a [`ReviewComment`] JSON body
//! (bearer token from `token_env` when set), expecting any 2xx. Up to three
//! attempts with exponential backoff; 4xx answers other than 408 and 429 are
//! final. Progress events go to `POST {base_url}/progress`, best effort.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ProgressEvent, ReportError, ReviewComment};
use crate::geometry::BBox;
use crate::natural::natural_cmp;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROGRESS_FILE: &str = "progress.ndjson";

const HTTP_ATTEMPTS: u32 = 3;

fn default_backoff_ms() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SinkConfig {
    /// Writes under `dir`, or under the run's output directory when unset.
    File {
        #[serde(default)]
        dir: Option<PathBuf>,
    },
    Http {
        base_url: String,
        #[serde(default)]
        token_env: Option<String>,
        #[serde(default = "default_backoff_ms")]
        backoff_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub error_group_id: String,
    pub page_id: String,
    pub markdown: String,
    pub overlay: Option<String>,
    pub anchor_bbox: Option<BBox>,
    pub datasheet_links: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: u32,
    comments: &'a [ManifestEntry],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub error_group_id: String,
    pub page_id: String,
    pub delivered: bool,
    pub attempts: u32,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub records: Vec<DeliveryRecord>,
}

impl DeliveryReport {
    pub fn delivered(&self) -> usize {
        self.records.iter().filter(|r| r.delivered).count()
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io(format!("{}: {e}", path.display()))
}

pub struct FileSink {
    dir: PathBuf,
    entries: Mutex<Vec<ManifestEntry>>,
}

impl FileSink {
    /// Prepares `dir`, removing comments, overlays, manifest and progress
    /// left by an earlier run, and writes an empty manifest.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, ReportError> {
        let dir = dir.into();
        for sub in ["comments", "overlays"] {
            let p = dir.join(sub);
            if p.exists() {
                std::fs::remove_dir_all(&p).map_err(|e| io(&p, e))?;
            }
            std::fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
        }
        let progress = dir.join(PROGRESS_FILE);
        std::fs::write(&progress, "").map_err(|e| io(&progress, e))?;
        let sink = Self {
            dir,
            entries: Mutex::new(Vec::new()),
        };
        sink.write_manifest(&[])?;
        Ok(sink)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_manifest(&self, entries: &[ManifestEntry]) -> Result<(), ReportError> {
        let path = self.dir.join(MANIFEST_FILE);
        let mut body = serde_json::to_string_pretty(&Manifest {
            version: 1,
            comments: entries,
        })
        .map_err(|e| io(&path, e))?;
        body.push('\n');
        std::fs::write(&path, body).map_err(|e| io(&path, e))
    }

    fn post(&self, comments: &[ReviewComment]) -> Result<DeliveryReport, ReportError> {
        let mut report = DeliveryReport::default();
        let mut entries = self.entries.lock().expect("manifest lock poisoned");
        for c in comments {
            let md_rel = format!("comments/{}.md", c.error_group_id);
            let md = self.dir.join(&md_rel);
            std::fs::write(&md, &c.markdown).map_err(|e| io(&md, e))?;
            let overlay = match &c.overlay_svg {
                Some(svg) => {
                    let rel = format!("overlays/{}.svg", c.error_group_id);
                    let p = self.dir.join(&rel);
                    std::fs::write(&p, svg).map_err(|e| io(&p, e))?;
                    Some(rel)
                }
                None => None,
            };
            entries.retain(|e| e.error_group_id != c.error_group_id || e.page_id != c.page_id);
            entries.push(ManifestEntry {
                error_group_id: c.error_group_id.clone(),
                page_id: c.page_id.clone(),
                markdown: md_rel,
                overlay,
                anchor_bbox: c.anchor_bbox,
                datasheet_links: c.datasheet_links.clone(),
            });
            report.records.push(DeliveryRecord {
                error_group_id: c.error_group_id.clone(),
                page_id: c.page_id.clone(),
                delivered: true,
                attempts: 1,
                error: None,
            });
        }
        entries.sort_by(|a, b| natural_cmp(&a.page_id, &b.page_id).then_with(|| a.error_group_id.cmp(&b.error_group_id)));
        self.write_manifest(&entries)?;
        Ok(report)
    }

    fn progress(&self, events: &[ProgressEvent]) -> Result<(), ReportError> {
        let path = self.dir.join(PROGRESS_FILE);
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| io(&path, e))?;
        for ev in events {
            let line = serde_json::to_string(ev).map_err(|e| io(&path, e))?;
            writeln!(f, "{line}").map_err(|e| io(&path, e))?;
        }
        Ok(())
    }
}

pub struct HttpSink {
    base_url: String,
    token_env: Option<String>,
    backoff: Duration,
    client: reqwest::Client,
}

enum Failure {
    Transport(String),
    Status(reqwest::StatusCode, bool),
}

impl HttpSink {
    pub fn new(base_url: impl Into<String>, token_env: Option<String>, backoff: Duration) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token_env,
            backoff,
            client: reqwest::Client::new(),
        }
    }

    async fn send(&self, path: &str, body: &impl Serialize) -> Result<(), Failure> {
        let mut req = self.client.post(format!("{}/{path}", self.base_url)).json(body);
        if let Some(t) = self.token_env.as_ref().and_then(|v| std::env::var(v).ok()) {
            req = req.bearer_auth(t);
        }
        match req.send().await {
            Err(e) => Err(Failure::Transport(e.to_string())),
            Ok(r) if r.status().is_success() => Ok(()),
            Ok(r) => {
                let st = r.status();
                let retryable = st.is_server_error()
                    || st == reqwest::StatusCode::REQUEST_TIMEOUT
                    || st == reqwest::StatusCode::TOO_MANY_REQUESTS;
                Err(Failure::Status(st, retryable))
            }
        }
    }

    async fn post(&self, comments: &[ReviewComment]) -> Result<DeliveryReport, ReportError> {
        let mut report = DeliveryReport::default();
        let mut transport_only = true;
        for c in comments {
            let mut attempts = 0;
            let mut error = None;
            while attempts < HTTP_ATTEMPTS {
                if attempts > 0 {
                    tokio::time::sleep(self.backoff * 2u32.pow(attempts - 1)).await;
                }
                attempts += 1;
                match self.send("comments", c).await {
                    Ok(()) => {
                        error = None;
                        break;
                    }
                    Err(Failure::Transport(m)) => error = Some(m),
                    Err(Failure::Status(st, retryable)) => {
                        transport_only = false;
                        error = Some(format!("HTTP {st}"));
                        if !retryable {
                            break;
                        }
                    }
                }
            }
            report.records.push(DeliveryRecord {
                error_group_id: c.error_group_id.clone(),
                page_id: c.page_id.clone(),
                delivered: error.is_none(),
                attempts,
                error,
            });
        }
        if !comments.is_empty() && report.delivered() == 0 && transport_only {
            let last = report.records.last().and_then(|r| r.error.clone()).unwrap_or_default();
            return Err(ReportError::SinkUnreachable(format!("{}: {last}", self.base_url)));
        }
        Ok(report)
    }

    async fn progress(&self, events: &[ProgressEvent]) {
        for ev in events {
            if let Err(Failure::Transport(m)) = self.send("progress", ev).await {
                tracing::debug!(error = %m, "progress update not delivered");
            }
        }
    }
}

pub enum ReviewSink {
    File(FileSink),
    Http(HttpSink),
}

impl ReviewSink {
    /// Builds the sink; a file sink without its own directory uses `out_dir`.
    pub fn from_config(cfg: &SinkConfig, out_dir: &Path) -> Result<Self, ReportError> {
        Ok(match cfg {
            SinkConfig::File { dir } => ReviewSink::File(FileSink::create(dir.clone().unwrap_or_else(|| out_dir.to_path_buf()))?),
            SinkConfig::Http {
                base_url,
                token_env,
                backoff_ms,
            } => ReviewSink::Http(HttpSink::new(
                base_url.clone(),
                token_env.clone(),
                Duration::from_millis(*backoff_ms),
            )),
        })
    }

    pub async fn report_progress(&self, events: &[ProgressEvent]) -> Result<(), ReportError> {
        match self {
            ReviewSink::File(f) => f.progress(events),
            ReviewSink::Http(h) => {
                h.progress(events).await;
                Ok(())
            }
        }
    }
}

/// Delivers comments in order, then the progress events. Partial delivery
/// is reported, not treated as an error.
pub async fn post_comments(
    sink: &ReviewSink,
    comments: &[ReviewComment],
    progress: &[ProgressEvent],
) -> Result<DeliveryReport, ReportError> {
    let report = match sink {
        ReviewSink::File(f) => f.post(comments)?,
        ReviewSink::Http(h) => h.post(comments).await?,
    };
    sink.report_progress(progress).await?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::Stage;

    fn comment(id: &str, svg: bool) -> ReviewComment {
        ReviewComment {
            page_id: "P1".into(),
            anchor_bbox: None,
            markdown: format!("### {id}\n"),
            datasheet_links: vec![],
            error_group_id: id.into(),
            overlay_svg: svg.then(|| "<svg/>".to_string()),
        }
    }

    #[tokio::test]
    async fn file_sink_layout() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("comments")).unwrap();
        std::fs::write(dir.path().join("comments/stale.md"), "old").unwrap();
        let sink = ReviewSink::File(FileSink::create(dir.path()).unwrap());
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest["comments"], serde_json::json!([]));
        assert!(!dir.path().join("comments/stale.md").exists());

        let report = post_comments(
            &sink,
            &[comment("bbbbbbbbbbbb", true), comment("aaaaaaaaaaaa", false)],
            &[ProgressEvent::new("P1", Stage::Posted)],
        )
        .await
        .unwrap();
        assert_eq!(report.delivered(), 2);
        assert_eq!(std::fs::read_dir(dir.path().join("comments")).unwrap().count(), 2);
        assert_eq!(std::fs::read_dir(dir.path().join("overlays")).unwrap().count(), 1);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        let ids: Vec<&str> = manifest["comments"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["error_group_id"].as_str().unwrap())
            .collect();
        assert_eq!(ids, vec!["aaaaaaaaaaaa", "bbbbbbbbbbbb"]);
        let progress = std::fs::read_to_string(dir.path().join(PROGRESS_FILE)).unwrap();
        assert_eq!(progress.lines().count(), 1);
    }

    #[tokio::test]
    async fn unreachable_http_sink() {
        let sink = ReviewSink::Http(HttpSink::new("http://127.0.0.1:9", None, Duration::from_millis(1)));
        let err = post_comments(&sink, &[comment("aaaaaaaaaaaa", false)], &[]).await.unwrap_err();
        assert!(matches!(err, ReportError::SinkUnreachable(_)));
        // nothing to deliver is not an error
        assert_eq!(post_comments(&sink, &[], &[]).await.unwrap().records.len(), 0);
    }
}
