//! Document fetching and decoding.
//!
//! URLs with an `http`/`https` scheme are fetched over HTTP. `file:///abs`,
//! `file:relative` and scheme-less paths are read from disk; relative paths
//! resolve against the fetcher's base directory. Documents are UTF-8 text
//! with pages separated by form feeds (`\x0C`).

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use futures::future::{BoxFuture, FutureExt};
use regex::Regex;

use super::{DatasheetDocument, DatasheetError, DocPage, PartRef, TocEntry};
use crate::singleflight::SingleFlight;

pub trait Fetcher: Send + Sync {
    fn fetch<'a>(&'a self, url: &'a str) -> BoxFuture<'a, Result<Vec<u8>, DatasheetError>>;

    /// Fetch with a bearer token; fetchers without a notion of credentials
    /// ignore it.
    fn fetch_authorized<'a>(
        &'a self,
        url: &'a str,
        _token: Option<String>,
    ) -> BoxFuture<'a, Result<Vec<u8>, DatasheetError>> {
        self.fetch(url)
    }
}

pub struct StandardFetcher {
    base_dir: PathBuf,
    /// Built on first HTTP use; local-only runs never pay for TLS setup.
    client: OnceLock<reqwest::Client>,
}

impl StandardFetcher {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_dir: base_dir.into(),
            client: OnceLock::new(),
        }
    }

    fn local_path(&self, url: &str) -> PathBuf {
        let path = url
            .strip_prefix("file://")
            .or_else(|| url.strip_prefix("file:"))
            .unwrap_or(url);
        resolve(&self.base_dir, Path::new(path))
    }

    async fn http(&self, url: &str, token: Option<String>) -> Result<Vec<u8>, DatasheetError> {
        let failed = |detail: String| DatasheetError::FetchFailed {
            url: url.to_string(),
            detail,
        };
        let mut req = self.client.get_or_init(reqwest::Client::new).get(url);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.map_err(|e| failed(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(failed(format!("HTTP {}", resp.status())));
        }
        let body = resp.bytes().await.map_err(|e| failed(e.to_string()))?;
        Ok(body.to_vec())
    }
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub(crate) fn is_http(url: &str) -> bool {
    url.starts_with("http://") || url.starts_with("https://")
}

impl Fetcher for StandardFetcher {
    fn fetch<'a>(&'a self, url: &'a str) -> BoxFuture<'a, Result<Vec<u8>, DatasheetError>> {
        self.fetch_authorized(url, None)
    }

    fn fetch_authorized<'a>(
        &'a self,
        url: &'a str,
        token: Option<String>,
    ) -> BoxFuture<'a, Result<Vec<u8>, DatasheetError>> {
        async move {
            if is_http(url) {
                return self.http(url, token).await;
            }
            let path = self.local_path(url);
            tokio::fs::read(&path).await.map_err(|e| DatasheetError::FetchFailed {
                url: url.to_string(),
                detail: format!("{}: {e}", path.display()),
            })
        }
        .boxed()
    }
}

fn toc_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\S.*?)\s*\.{2,}\s*(\d+)\s*$").expect("valid regex"))
}

/// Decodes a fetched payload into pages. A page whose first non-blank line
/// reads "Table of Contents" supplies the TOC (`Title ..... 3` lines,
/// 1-based page numbers).
pub fn decode_document(url: &str, bytes: &[u8]) -> Result<DatasheetDocument, DatasheetError> {
    let not = |detail: &str| DatasheetError::NotADatasheet {
        url: url.to_string(),
        detail: detail.to_string(),
    };
    if bytes.starts_with(b"%PDF") {
        return Err(not("binary PDF payloads are not decoded; provide extracted text"));
    }
    let text = std::str::from_utf8(bytes).map_err(|_| not("payload is not UTF-8 text"))?;
    let mut pages: Vec<DocPage> = text
        .split('\x0C')
        .map(|t| DocPage {
            text: t.to_string(),
            thumbnail: None,
        })
        .collect();
    while pages.last().is_some_and(|p| p.text.trim().is_empty()) {
        pages.pop();
    }
    if pages.is_empty() {
        return Err(not("document has no text"));
    }
    let n = pages.len();
    let toc = pages.iter().find_map(|p| {
        let mut lines = p.text.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next()?.trim();
        if !head.eq_ignore_ascii_case("table of contents") {
            return None;
        }
        let entries: Vec<TocEntry> = lines
            .filter_map(|l| {
                let c = toc_line().captures(l)?;
                let page: usize = c[2].parse().ok()?;
                (1..=n).contains(&page).then(|| TocEntry {
                    title: c[1].to_string(),
                    page: page - 1,
                })
            })
            .collect();
        (!entries.is_empty()).then_some(entries)
    });
    Ok(DatasheetDocument {
        source_url: url.to_string(),
        pages,
        toc,
    })
}

type FetchResult = Result<Arc<DatasheetDocument>, DatasheetError>;

/// Fetches and decodes documents, sharing one in-flight fetch among
/// concurrent callers asking for the same part and URL.
#[derive(Clone)]
pub struct DedupFetcher {
    inner: Arc<dyn Fetcher>,
    flights: SingleFlight<(String, String), FetchResult>,
}

impl DedupFetcher {
    pub fn new(inner: Arc<dyn Fetcher>) -> Self {
        Self {
            inner,
            flights: SingleFlight::new(),
        }
    }

    pub async fn fetch(&self, part: &PartRef, url: &str) -> FetchResult {
        let inner = self.inner.clone();
        let owned = url.to_string();
        let (doc, _) = self
            .flights
            .run((part.key().to_string(), url.to_string()), move || async move {
                let bytes = inner.fetch(&owned).await?;
                decode_document(&owned, &bytes).map(Arc::new)
            })
            .await;
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    #[test]
    fn form_feed_pages_and_toc() {
        let text = "TPS54331\nOverview\x0CTable of Contents\nPin Functions ........ 3\nBogus .... 9\n\x0CPIN 1 BOOT\n\x0C";
        let doc = decode_document("file:x.txt", text.as_bytes()).unwrap();
        assert_eq!(doc.pages.len(), 3);
        assert_eq!(
            doc.toc,
            Some(vec![TocEntry {
                title: "Pin Functions".into(),
                page: 2
            }])
        );
    }

    #[test]
    fn undecodable_payloads() {
        assert!(matches!(
            decode_document("a.pdf", b"%PDF-1.7\n..."),
            Err(DatasheetError::NotADatasheet { .. })
        ));
        assert!(matches!(
            decode_document("a", &[0xff, 0xfe, 0x00]),
            Err(DatasheetError::NotADatasheet { .. })
        ));
        assert!(decode_document("a", b" \x0C\n").is_err());
    }

    #[tokio::test]
    async fn local_relative_and_absolute() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("ds")).unwrap();
        std::fs::write(dir.path().join("ds/a.txt"), "p1\x0Cp2").unwrap();
        let f = StandardFetcher::new(dir.path());
        assert_eq!(f.fetch("file:ds/a.txt").await.unwrap(), b"p1\x0Cp2");
        assert_eq!(f.fetch("ds/a.txt").await.unwrap(), b"p1\x0Cp2");
        let abs = format!("file://{}", dir.path().join("ds/a.txt").display());
        assert_eq!(f.fetch(&abs).await.unwrap(), b"p1\x0Cp2");
        assert!(matches!(
            f.fetch("file:missing.txt").await,
            Err(DatasheetError::FetchFailed { .. })
        ));
    }

    struct Counting(AtomicUsize);

    impl Fetcher for Counting {
        fn fetch<'a>(&'a self, _url: &'a str) -> BoxFuture<'a, Result<Vec<u8>, DatasheetError>> {
            async move {
                self.0.fetch_add(1, Ordering::SeqCst);
                tokio::time::sleep(Duration::from_millis(30)).await;
                Ok(b"page one\x0Cpage two".to_vec())
            }
            .boxed()
        }
    }

    #[tokio::test]
    async fn concurrent_fetches_coalesce() {
        let counter = Arc::new(Counting(AtomicUsize::new(0)));
        let f = DedupFetcher::new(counter.clone());
        let part = PartRef::mpn("U");
        let docs = futures::future::join_all((0..8).map(|_| f.fetch(&part, "file:u.txt"))).await;
        assert_eq!(counter.0.load(Ordering::SeqCst), 1);
        let first = docs[0].as_ref().unwrap();
        assert!(docs.iter().all(|d| d.as_ref().unwrap() == first));
        // in-flight only: a later fetch goes through again
        f.fetch(&part, "file:u.txt").await.unwrap();
        assert_eq!(counter.0.load(Ordering::SeqCst), 2);
    }
}
