//! Cache-first datasheet retrieval with a bounded attempt loop.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::agents::{analyze_head, critique, extract_spec};
use super::cache::{CacheEntry, SpecCache};
use super::fetch::{DedupFetcher, Fetcher};
use super::library::{locate, LibrarySource};
use super::{CriticScore, DatasheetError, DatasheetSpec, PartRef};
use crate::gateway::LlmGateway;
use crate::singleflight::SingleFlight;
use crate::trace::Tracer;

fn default_threshold() -> f64 {
    7.0
}

fn default_max_attempts() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Weighted critic score at which the attempt loop stops early.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Candidate URLs consumed at most, failed fetches included.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            max_attempts: default_max_attempts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub url: String,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedSpec {
    pub spec: Arc<DatasheetSpec>,
    pub score: CriticScore,
    pub cache_hit: bool,
    /// Empty on a cache hit.
    pub attempts: Vec<AttemptRecord>,
}

type Outcome = Result<RetrievedSpec, DatasheetError>;

struct Inner {
    gateway: Arc<LlmGateway>,
    fetcher: Arc<dyn Fetcher>,
    docs: DedupFetcher,
    libraries: Vec<LibrarySource>,
    base_dir: PathBuf,
    cache: SpecCache,
    config: RetrievalConfig,
    tracer: Option<Tracer>,
}

/// Shared retrieval service. Concurrent retrievals of one part number are
/// coalesced into a single pipeline run.
#[derive(Clone)]
pub struct Retriever {
    inner: Arc<Inner>,
    flights: SingleFlight<String, Outcome>,
}

impl Retriever {
    pub fn new(
        gateway: Arc<LlmGateway>,
        fetcher: Arc<dyn Fetcher>,
        libraries: Vec<LibrarySource>,
        base_dir: impl Into<PathBuf>,
        cache: SpecCache,
        config: RetrievalConfig,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                gateway,
                docs: DedupFetcher::new(fetcher.clone()),
                fetcher,
                libraries,
                base_dir: base_dir.into(),
                cache,
                config,
                tracer: None,
            }),
            flights: SingleFlight::new(),
        }
    }

    /// Records a span per attempt. Must be called before the retriever is cloned.
    pub fn with_tracer(mut self, tracer: Tracer) -> Self {
        Arc::get_mut(&mut self.inner)
            .expect("with_tracer called on a shared retriever")
            .tracer = Some(tracer);
        self
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.inner.config
    }

    /// `span` prefixes the trace span ids of the agent calls made.
    pub async fn retrieve_spec(&self, part: &PartRef, schematic_url: Option<&str>, span: Option<&str>) -> Outcome {
        let inner = self.inner.clone();
        let part = part.clone();
        let url = schematic_url.map(str::to_string);
        let span = span.map(str::to_string);
        let key = part.key().to_string();
        let (out, _) = self
            .flights
            .run(key, move || async move { inner.retrieve(&part, url.as_deref(), span.as_deref()).await })
            .await;
        out
    }
}

impl Inner {
    async fn retrieve(&self, part: &PartRef, schematic_url: Option<&str>, span: Option<&str>) -> Outcome {
        let candidates = locate(
            part,
            &self.libraries,
            schematic_url,
            self.fetcher.as_ref(),
            &self.base_dir,
        )
        .await?;
        for url in &candidates {
            match self.cache.lookup(part.key(), url) {
                Ok(Some(e)) => {
                    return Ok(RetrievedSpec {
                        spec: Arc::new(e.spec),
                        score: e.score,
                        cache_hit: true,
                        attempts: vec![],
                    })
                }
                Ok(None) => {}
                Err(e) => tracing::warn!(part = %part, error = %e, "cache lookup failed"),
            }
        }

        let mut attempts = Vec::new();
        let mut best: Option<(DatasheetSpec, CriticScore)> = None;
        for (i, url) in candidates.iter().take(self.config.max_attempts).enumerate() {
            let attempt_span = span.map(|s| format!("{s}/attempt:{i}"));
            let mut trace = match (&self.tracer, &attempt_span) {
                (Some(t), Some(id)) => Some(t.start(id.clone(), "attempt")),
                _ => None,
            };
            let result = self.attempt(part, url, attempt_span.as_deref()).await;
            if let Some(mut t) = trace.take() {
                t.set("attempt", i);
                t.set("url", url.as_str());
                match &result {
                    Ok((_, score)) => t.set("score", score.weighted),
                    Err(e) => t.set("error", e.to_string()),
                }
                t.finish();
            }
            match result {
                Ok((spec, score)) => {
                    attempts.push(AttemptRecord {
                        url: url.clone(),
                        score: Some(score.weighted),
                        error: None,
                    });
                    let reached = score.weighted >= self.config.threshold;
                    if best.as_ref().is_none_or(|(_, b)| score.weighted > b.weighted) {
                        best = Some((spec, score));
                    }
                    if reached {
                        break;
                    }
                }
                Err(e) => attempts.push(AttemptRecord {
                    url: url.clone(),
                    score: None,
                    error: Some(e.to_string()),
                }),
            }
        }
        let Some((spec, score)) = best else {
            return Err(DatasheetError::AllAttemptsFailed {
                part: part.key().to_string(),
                causes: attempts
                    .into_iter()
                    .map(|a| format!("{}: {}", a.url, a.error.unwrap_or_default()))
                    .collect(),
            });
        };
        let entry = CacheEntry {
            part: part.key().to_string(),
            source_url: spec.source_url.clone(),
            spec,
            score,
            stored_at: self.cache.now(),
        };
        if let Err(e) = self.cache.put(&entry) {
            tracing::warn!(part = %part, error = %e, "could not cache specification");
        }
        Ok(RetrievedSpec {
            spec: Arc::new(entry.spec),
            score,
            cache_hit: false,
            attempts,
        })
    }

    async fn attempt(
        &self,
        part: &PartRef,
        url: &str,
        span: Option<&str>,
    ) -> Result<(DatasheetSpec, CriticScore), DatasheetError> {
        let doc = self.docs.fetch(part, url).await?;
        let gw = self.gateway.as_ref();
        let pages = analyze_head(gw, part, &doc, span).await?;
        let spec = extract_spec(gw, part, &doc, &pages, span).await?;
        let score = critique(gw, &spec, span).await?;
        Ok((spec, score))
    }
}
