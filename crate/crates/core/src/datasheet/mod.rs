//! Datasheet retrieval: locate candidate documents through a library chain,
//! fetch them with in-flight deduplication, select relevant pages, extract a
//! compact specification, score it with a weighted critic and cache the best
//! extraction for seven days.

mod agents;
mod cache;
mod fetch;
mod library;
mod retrieve;
mod spec_xml;

use serde::{Deserialize, Serialize};

pub use agents::{analyze_head, critique, extract_spec, ExtractionOutput, HEAD_PAGE_BUDGET};
pub use cache::{CacheEntry, Clock, SpecCache, SystemClock, CACHE_SCHEMA_VERSION, CACHE_TTL_SECS};
pub use fetch::{decode_document, DedupFetcher, Fetcher, StandardFetcher};
pub use library::{locate, validate_libraries, LibraryKind, LibrarySource};
pub use retrieve::{AttemptRecord, RetrievalConfig, RetrievedSpec, Retriever};
pub use spec_xml::{parse_spec_xml, serialize_spec_xml};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpn: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ipn: Option<String>,
}

impl PartRef {
    /// `None` when neither number is present.
    pub fn new(mpn: Option<String>, ipn: Option<String>) -> Option<Self> {
        let mpn = mpn.filter(|s| !s.trim().is_empty());
        let ipn = ipn.filter(|s| !s.trim().is_empty());
        (mpn.is_some() || ipn.is_some()).then_some(Self { mpn, ipn })
    }

    pub fn mpn(mpn: impl Into<String>) -> Self {
        Self {
            mpn: Some(mpn.into()),
            ipn: None,
        }
    }

    /// Identity used for caching and deduplication: the MPN if present, else the IPN.
    pub fn key(&self) -> &str {
        self.mpn.as_deref().or(self.ipn.as_deref()).unwrap_or_default()
    }

    pub fn of_component(c: &crate::schematic::Component) -> Option<Self> {
        Self::new(c.mpn.clone(), c.ipn.clone())
    }
}

impl std::fmt::Display for PartRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocPage {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TocEntry {
    pub title: String,
    pub page: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasheetDocument {
    pub source_url: String,
    pub pages: Vec<DocPage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toc: Option<Vec<TocEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinSpec {
    pub designator: String,
    pub function: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub parameter: String,
    pub limit: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCondition {
    pub parameter: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub typ: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasheetSpec {
    pub part: PartRef,
    pub source_url: String,
    pub pins: Vec<PinSpec>,
    pub abs_max_ratings: Vec<Rating>,
    pub rec_operating: Vec<OperatingCondition>,
    pub blocks: Vec<String>,
    pub app_circuits: Vec<String>,
}

impl DatasheetSpec {
    pub fn pin(&self, designator: &str) -> Option<&PinSpec> {
        self.pins.iter().find(|p| p.designator == designator)
    }

    pub fn to_xml(&self) -> String {
        serialize_spec_xml(self)
    }
}

pub const CRITIC_WEIGHTS: [f64; 4] = [0.25, 0.40, 0.20, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticScore {
    pub feature_completeness: u8,
    pub pin_function_coverage: u8,
    pub application_information: u8,
    pub typical_application_circuits: u8,
    pub weighted: f64,
}

impl CriticScore {
    /// Builds a score from sub-scores; `weighted` is always computed here.
    pub fn new(fc: u8, pfc: u8, ai: u8, tac: u8) -> Self {
        // integer percentages keep (8,6,10,4) at exactly 7.0
        let total = 25 * u32::from(fc) + 40 * u32::from(pfc) + 20 * u32::from(ai) + 15 * u32::from(tac);
        Self {
            feature_completeness: fc,
            pin_function_coverage: pfc,
            application_information: ai,
            typical_application_circuits: tac,
            weighted: f64::from(total) / 100.0,
        }
    }

    pub fn sub_scores(&self) -> [u8; 4] {
        [
            self.feature_completeness,
            self.pin_function_coverage,
            self.application_information,
            self.typical_application_circuits,
        ]
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum DatasheetError {
    #[error("no datasheet candidates for part `{0}`")]
    NoCandidates(String),
    #[error("fetching {url} failed: {detail}")]
    FetchFailed { url: String, detail: String },
    #[error("{url} is not a decodable datasheet: {detail}")]
    NotADatasheet { url: String, detail: String },
    #[error("cache store: {0}")]
    StoreIo(String),
    #[error("agent call failed: {0}")]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error("malformed specification XML: {0}")]
    MalformedSpec(String),
    #[error("all {} attempts for `{part}` failed: {}", causes.len(), causes.join("; "))]
    AllAttemptsFailed { part: String, causes: Vec<String> },
}
