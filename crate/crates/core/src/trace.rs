//! Span collection and the newline-delimited trace file.
//!
//! Span ids are hierarchical paths (`run/page:P1/group:0/review:2`), so the
//! parent/child tree is reproducible across runs regardless of the order in
//! which concurrent work finishes. Events are written sorted by span id.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const ROOT_SPAN: &str = "run";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub span_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub parent_id: Option<String>,
    pub name: String,
    pub start_unix_us: u64,
    pub duration_us: u64,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

/// Joins a child segment onto a parent span id. `/` in the segment is
/// replaced so the path stays unambiguous.
pub fn child_span(parent: &str, kind: &str, label: impl std::fmt::Display) -> String {
    let label = label.to_string().replace('/', "_");
    format!("{parent}/{kind}:{label}")
}

fn parent_of(span_id: &str) -> Option<String> {
    span_id.rfind('/').map(|i| span_id[..i].to_string())
}

#[derive(Clone, Default)]
pub struct Tracer {
    events: Arc<Mutex<Vec<TraceEvent>>>,
}

impl Tracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&self, span_id: impl Into<String>, name: impl Into<String>) -> Span {
        Span {
            tracer: self.clone(),
            span_id: span_id.into(),
            name: name.into(),
            wall_start: SystemTime::now(),
            start: Instant::now(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn record(&self, event: TraceEvent) {
        self.events.lock().expect("tracer poisoned").push(event);
    }

    /// All events recorded so far, sorted by span id.
    pub fn events(&self) -> Vec<TraceEvent> {
        let mut ev = self.events.lock().expect("tracer poisoned").clone();
        ev.sort_by(|a, b| a.span_id.cmp(&b.span_id));
        ev
    }
}

/// An open span; recorded when [`Span::finish`] is called.
pub struct Span {
    tracer: Tracer,
    span_id: String,
    name: String,
    wall_start: SystemTime,
    start: Instant,
    attributes: BTreeMap<String, Value>,
}

impl Span {
    pub fn id(&self) -> &str {
        &self.span_id
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.attributes.insert(key.to_string(), value.into());
    }

    pub fn finish(self) {
        let start_unix_us = self
            .wall_start
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as u64)
            .unwrap_or(0);
        let event = TraceEvent {
            parent_id: parent_of(&self.span_id),
            span_id: self.span_id,
            name: self.name,
            start_unix_us,
            duration_us: self.start.elapsed().as_micros() as u64,
            attributes: self.attributes,
        };
        self.tracer.record(event);
    }
}

/// Writes one JSON record per event, in the given order.
pub fn emit_traces(events: &[TraceEvent], path: &Path) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

/// Reads a trace file back.
pub fn read_traces(path: &Path) -> std::io::Result<Vec<TraceEvent>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

/// Cache hit rate derived from `cache_hit` span attributes.
pub fn cache_hit_rate(events: &[TraceEvent]) -> Option<f64> {
    let (mut hits, mut total) = (0u64, 0u64);
    for e in events {
        if let Some(Value::Bool(h)) = e.attributes.get("cache_hit") {
            total += 1;
            hits += u64::from(*h);
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}
