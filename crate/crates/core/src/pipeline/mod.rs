//! End-to-end review run: load the schematic, choose pages, and drive each
//! page through group selection, datasheet retrieval, multi-run review,
//! consensus, error grouping and comment delivery under a time budget.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use futures::StreamExt;
use serde::Serialize;

use crate::datasheet::{DatasheetSpec, Fetcher, PartRef, Retriever, SpecCache, StandardFetcher};
use crate::gateway::{ChatBackend, LlmGateway, UsageLedger};
use crate::natural::natural_cmp;
use crate::report::{
    post_comments, render_comment, DeliveryReport, ProgressEvent, ReportError, ReviewComment, ReviewSink, Stage,
};
use crate::review::{
    combine_consensus, fan_out_reviews, group_errors, select_groups, summarize_groups, Checklists,
    ConsensusAnalysis, GroupContext, ReviewError,
};
use crate::schematic::{augment_netlist, diff_pages, ingest_schematic, Page, Schematic, SchematicError};
use crate::trace::{child_span, emit_traces, TraceEvent, Tracer, ROOT_SPAN};

pub use config::{ConfigError, Mode, Overrides, RunConfig, CONFIG_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("reading {path}: {detail}")]
    InputIo { path: PathBuf, detail: String },
    #[error("schematic {path}: {source}")]
    Input { path: PathBuf, source: SchematicError },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("writing trace {path}: {detail}")]
    Trace { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// The time budget ran out before every page was started.
    Partial,
    Failed,
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Complete => 0,
            RunStatus::Partial => 3,
            RunStatus::Failed => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PageFailure {
    pub page_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub mode: Mode,
    pub pages_analyzed: Vec<String>,
    pub pages_skipped: Vec<String>,
    pub pages_failed: Vec<PageFailure>,
    pub comments_emitted: usize,
    pub comments_delivered: usize,
    pub usage: UsageLedger,
    pub cache: CacheStats,
    pub wall_time_ms: f64,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A configured run. Backend and fetcher can be replaced before `run`.
pub struct Pipeline {
    cfg: RunConfig,
    backend: Option<Arc<dyn ChatBackend>>,
    fetcher: Option<Arc<dyn Fetcher>>,
}

struct PageResult {
    page_id: String,
    comments: Vec<ReviewComment>,
    delivery: Result<DeliveryReport, ReportError>,
    cache: CacheStats,
    warnings: Vec<String>,
}

enum PageOutcome {
    Done(PageResult),
    Skipped(String),
    Failed(PageFailure, Vec<String>),
}

struct Shared<'a> {
    cfg: &'a RunConfig,
    gateway: &'a LlmGateway,
    retriever: &'a Retriever,
    checklists: &'a Checklists,
    sink: &'a ReviewSink,
    tracer: &'a Tracer,
    started: Instant,
}

/// Pages to analyze, in schematic order. Unknown override ids come back as
/// warnings.
pub fn select_pages(
    mode: Mode,
    head: &Schematic,
    base: Option<&Schematic>,
    pages_override: &[String],
) -> (Vec<String>, Vec<String>) {
    let mut warnings = Vec::new();
    let wanted: BTreeSet<String> = match mode {
        Mode::FullAnalysis => head.pages.iter().map(|p| p.id.clone()).collect(),
        Mode::DesignReview => {
            let mut s = base.map(|b| diff_pages(b, head)).unwrap_or_default();
            for id in pages_override {
                if head.page(id).is_some() {
                    s.insert(id.clone());
                } else {
                    warnings.push(format!("page `{id}` named in pages_override is not in the schematic"));
                }
            }
            s
        }
    };
    let pages = head
        .pages
        .iter()
        .filter(|p| wanted.contains(&p.id))
        .map(|p| p.id.clone())
        .collect();
    (pages, warnings)
}

fn load_schematic(path: &Path) -> Result<Schematic, PipelineError> {
    let raw = std::fs::read(path).map_err(|e| PipelineError::InputIo {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let input = |source| PipelineError::Input {
        path: path.to_path_buf(),
        source,
    };
    let s = ingest_schematic(&raw, None).map_err(input)?;
    augment_netlist(&s).map_err(input)
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        Self {
            cfg,
            backend: None,
            fetcher: None,
        }
    }

    pub fn with_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn with_fetcher(mut self, fetcher: Arc<dyn Fetcher>) -> Self {
        self.fetcher = Some(fetcher);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// Runs the review and writes the trace file. Errors are returned only
    /// for problems that prevent the run from starting or its outputs from
    /// being written; page-level failures are reported in the [`RunReport`].
    pub async fn run(&self, schematic_path: &Path) -> Result<RunReport, PipelineError> {
        let started = Instant::now();
        let cfg = &self.cfg;
        cfg.validate()?;
        let head = load_schematic(schematic_path)?;
        let base = match (&cfg.mode, &cfg.base_schematic) {
            (Mode::DesignReview, Some(p)) => Some(load_schematic(p)?),
            _ => None,
        };

        let tracer = Tracer::new();
        let backend_cfg = cfg.backend.clone().expect("validated");
        let gateway = match &self.backend {
            Some(b) => LlmGateway::new(backend_cfg, b.clone()),
            None => LlmGateway::from_config(backend_cfg).map_err(ConfigError::Invalid)?,
        }
        .with_tracer(tracer.clone());
        let gateway = Arc::new(gateway);
        let fetcher = self
            .fetcher
            .clone()
            .unwrap_or_else(|| Arc::new(StandardFetcher::new(cfg.base_dir.clone())));
        let retriever = Retriever::new(
            gateway.clone(),
            fetcher,
            cfg.libraries.clone(),
            cfg.base_dir.clone(),
            SpecCache::new(cfg.cache_dir.clone()),
            cfg.retrieval(),
        )
        .with_tracer(tracer.clone());
        let checklists = Checklists::new(cfg.checklists_dir.clone());
        let sink = ReviewSink::from_config(&cfg.sink, &cfg.out_dir)?;

        let (pages, mut warnings) = select_pages(cfg.mode, &head, base.as_ref(), &cfg.pages_override);
        let shared = Shared {
            cfg,
            gateway: &gateway,
            retriever: &retriever,
            checklists: &checklists,
            sink: &sink,
            tracer: &tracer,
            started,
        };
        let outcomes: Vec<PageOutcome> = futures::stream::iter(pages.iter())
            .map(|id| shared.page(head.page(id).expect("selected from head")))
            .buffered(cfg.page_parallelism)
            .collect()
            .await;

        let mut report = RunReport {
            status: RunStatus::Complete,
            mode: cfg.mode,
            pages_analyzed: vec![],
            pages_skipped: vec![],
            pages_failed: vec![],
            comments_emitted: 0,
            comments_delivered: 0,
            usage: UsageLedger::default(),
            cache: CacheStats::default(),
            wall_time_ms: 0.0,
            warnings: vec![],
            error: None,
        };
        for o in outcomes {
            match o {
                PageOutcome::Done(r) => {
                    report.cache.hits += r.cache.hits;
                    report.cache.misses += r.cache.misses;
                    warnings.extend(r.warnings);
                    report.comments_emitted += r.comments.len();
                    match r.delivery {
                        Ok(d) => {
                            report.comments_delivered += d.delivered();
                            for rec in d.records.iter().filter(|r| !r.delivered) {
                                warnings.push(format!(
                                    "comment {} on page {} not delivered: {}",
                                    rec.error_group_id,
                                    rec.page_id,
                                    rec.error.as_deref().unwrap_or("unknown error")
                                ));
                            }
                        }
                        Err(e) => report.error = Some(e.to_string()),
                    }
                    report.pages_analyzed.push(r.page_id);
                }
                PageOutcome::Skipped(id) => report.pages_skipped.push(id),
                PageOutcome::Failed(f, w) => {
                    warnings.extend(w);
                    report.pages_failed.push(f);
                }
            }
        }
        if !report.pages_skipped.is_empty() {
            let events: Vec<_> = report
                .pages_skipped
                .iter()
                .map(|p| ProgressEvent::new(p.clone(), Stage::Skipped))
                .collect();
            if let Err(e) = sink.report_progress(&events).await {
                warnings.push(format!("progress not recorded: {e}"));
            }
        }
        report.status = if report.error.is_some() || !report.pages_failed.is_empty() {
            RunStatus::Failed
        } else if !report.pages_skipped.is_empty() {
            RunStatus::Partial
        } else {
            RunStatus::Complete
        };
        report.usage = gateway.usage();
        report.warnings = warnings;

        let mut root = tracer.start(ROOT_SPAN, "run");
        root.set("mode", serde_json::to_value(cfg.mode).expect("mode serializes"));
        root.set("status", serde_json::to_value(report.status).expect("status serializes"));
        root.set("pages_analyzed", report.pages_analyzed.clone());
        root.set("pages_skipped", report.pages_skipped.clone());
        root.set("comments", report.comments_emitted);
        let totals = report.usage.totals();
        root.set("tokens_in", totals.tokens_in);
        root.set("tokens_out", totals.tokens_out);
        root.finish();
        let path = cfg.trace_path();
        emit_traces(&tracer.events(), &path).map_err(|e| PipelineError::Trace {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        report.wall_time_ms = started.elapsed().as_secs_f64() * 1000.0;
        Ok(report)
    }
}

/// Convenience wrapper around [`Pipeline::run`].
pub async fn run_pipeline(cfg: RunConfig, schematic_path: &Path) -> Result<RunReport, PipelineError> {
    Pipeline::new(cfg).run(schematic_path).await
}

impl Shared<'_> {
    fn over_budget(&self) -> bool {
        self.cfg
            .time_budget()
            .is_some_and(|b| self.started.elapsed() >= b)
    }

    async fn page(&self, page: &Page) -> PageOutcome {
        if self.over_budget() {
            tracing::info!(page = %page.id, "time budget exhausted; skipping page");
            return PageOutcome::Skipped(page.id.clone());
        }
        let span_id = child_span(ROOT_SPAN, "page", &page.id);
        let mut span = self.tracer.start(span_id.clone(), "page");
        span.set("page_id", page.id.as_str());
        let mut progress = vec![ProgressEvent::new(&page.id, Stage::Started)];
        let mut warnings = Vec::new();
        let result = self.analyze(page, &span_id, &mut progress, &mut warnings).await;
        let outcome = match result {
            Ok((comments, cache)) => {
                progress.push(ProgressEvent::new(&page.id, Stage::Posted));
                let delivery = post_comments(self.sink, &comments, &progress).await;
                span.set("comments", comments.len());
                span.set("status", "complete");
                PageOutcome::Done(PageResult {
                    page_id: page.id.clone(),
                    comments,
                    delivery,
                    cache,
                    warnings,
                })
            }
            Err(e) => {
                span.set("status", "failed");
                span.set("error", e.to_string());
                if let Err(pe) = self.sink.report_progress(&progress).await {
                    warnings.push(format!("progress not recorded: {pe}"));
                }
                PageOutcome::Failed(
                    PageFailure {
                        page_id: page.id.clone(),
                        error: e.to_string(),
                    },
                    warnings,
                )
            }
        };
        span.finish();
        outcome
    }

    async fn analyze(
        &self,
        page: &Page,
        span_id: &str,
        progress: &mut Vec<ProgressEvent>,
        warnings: &mut Vec<String>,
    ) -> Result<(Vec<ReviewComment>, CacheStats), ReviewError> {
        let selection = select_groups(page, self.gateway, Some(span_id)).await?;
        warnings.extend(selection.warnings.iter().map(|w| format!("page {}: {w}", page.id)));
        progress.push(ProgressEvent::new(&page.id, Stage::GroupsSelected));

        let (specs, cache) = self.retrieve_specs(page, &selection.groups, span_id, warnings).await;
        progress.push(ProgressEvent::new(&page.id, Stage::DatasheetsRetrieved));

        let reviews = futures::future::join_all(selection.groups.iter().enumerate().map(|(i, group)| {
            let specs = &specs;
            async move {
                let group_span = child_span(span_id, "group", i);
                let mut span = self.tracer.start(group_span.clone(), "group");
                span.set("group", group.name.as_str());
                span.set("designators", group.designators.clone());
                let subset = group
                    .designators
                    .iter()
                    .filter_map(|d| specs.get(d).map(|s| (d.clone(), s.clone())))
                    .collect();
                let ctx = GroupContext::new(page, group, subset, self.checklists.for_group(&group.name));
                let k = self.cfg.runs;
                let out = async {
                    let fan = fan_out_reviews(&ctx, k, self.gateway, Some(&group_span)).await?;
                    let failures: Vec<String> = fan
                        .failures
                        .iter()
                        .map(|f| format!("page {} group `{}` run {}: {}", page.id, group.name, f.run_index, f.error))
                        .collect();
                    let analyses = combine_consensus(&ctx, &fan.results, k, self.gateway, Some(&group_span)).await?;
                    Ok::<_, ReviewError>((analyses, failures))
                }
                .await;
                span.set("ok", out.is_ok());
                span.finish();
                out
            }
        }))
        .await;
        let mut analyses: Vec<ConsensusAnalysis> = Vec::new();
        for r in reviews {
            let (a, failures) = r?;
            warnings.extend(failures);
            analyses.extend(a);
        }
        analyses.sort_by(|a, b| natural_cmp(&a.designator, &b.designator));
        progress.push(ProgressEvent::new(&page.id, Stage::Reviewed));

        let mut groups = group_errors(&analyses, page);
        if self.cfg.summarize_errors {
            if let Err(e) = summarize_groups(&mut groups, self.gateway, Some(span_id)).await {
                warnings.push(format!("page {}: keeping local summaries: {e}", page.id));
            }
        }
        progress.push(ProgressEvent::new(&page.id, Stage::ErrorsGrouped));
        let comments = groups.iter().map(|g| render_comment(g, &specs, page)).collect();
        Ok((comments, cache))
    }

    /// One retrieval per distinct part on the page, concurrently. Parts whose
    /// retrieval fails are reviewed without a datasheet.
    async fn retrieve_specs(
        &self,
        page: &Page,
        groups: &[crate::review::FunctionalGroup],
        span_id: &str,
        warnings: &mut Vec<String>,
    ) -> (BTreeMap<String, Arc<DatasheetSpec>>, CacheStats) {
        // part key -> (part, embedded URL, designators)
        let mut parts: BTreeMap<String, (PartRef, Option<String>, Vec<String>)> = BTreeMap::new();
        for g in groups {
            for d in &g.designators {
                let Some(part) = page.component(d).and_then(PartRef::of_component) else {
                    continue;
                };
                let e = parts
                    .entry(part.key().to_string())
                    .or_insert_with(|| (part.clone(), None, Vec::new()));
                if e.1.is_none() {
                    e.1 = g.datasheet_urls.get(d).cloned();
                }
                e.2.push(d.clone());
            }
        }
        let results = futures::future::join_all(parts.iter().map(|(key, (part, url, _))| async move {
            let id = child_span(span_id, "datasheet", key);
            let mut span = self.tracer.start(id.clone(), "datasheet");
            span.set("part", key.as_str());
            let r = self.retriever.retrieve_spec(part, url.as_deref(), Some(&id)).await;
            match &r {
                Ok(s) => {
                    span.set("cache_hit", s.cache_hit);
                    span.set("score", s.score.weighted);
                    span.set("source_url", s.spec.source_url.as_str());
                }
                Err(e) => {
                    span.set("cache_hit", false);
                    span.set("error", e.to_string());
                }
            }
            span.finish();
            r
        }))
        .await;

        let mut specs = BTreeMap::new();
        let mut stats = CacheStats::default();
        for ((key, (_, _, designators)), r) in parts.iter().zip(results) {
            match r {
                Ok(s) => {
                    if s.cache_hit {
                        stats.hits += 1;
                    } else {
                        stats.misses += 1;
                    }
                    for d in designators {
                        specs.insert(d.clone(), s.spec.clone());
                    }
                }
                Err(e) => {
                    stats.misses += 1;
                    warnings.push(format!("page {}: no datasheet for {key}: {e}", page.id));
                }
            }
        }
        (specs, stats)
    }
}

/// Trace events with timing fields zeroed, for run-to-run comparison.
pub fn untimed(events: &[TraceEvent]) -> Vec<TraceEvent> {
    events
        .iter()
        .map(|e| TraceEvent {
            start_unix_us: 0,
            duration_us: 0,
            ..e.clone()
        })
        .collect()
}
