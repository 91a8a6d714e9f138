//! Review comments: Markdown per-pin verdict tables with datasheet links,
//! SVG overlays, and delivery to a review sink.

mod render;
mod sink;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

pub use render::{render_comment, render_overlay};
pub use sink::{
    post_comments, DeliveryRecord, DeliveryReport, FileSink, HttpSink, ManifestEntry, ReviewSink, SinkConfig,
    MANIFEST_FILE, PROGRESS_FILE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewComment {
    pub page_id: String,
    pub anchor_bbox: Option<BBox>,
    pub markdown: String,
    pub datasheet_links: Vec<String>,
    pub error_group_id: String,
    pub overlay_svg: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Started,
    GroupsSelected,
    DatasheetsRetrieved,
    Reviewed,
    ErrorsGrouped,
    Posted,
    Skipped,
}

impl Stage {
    /// Fraction of the page's work done when this stage is reached.
    pub fn fraction(&self) -> f64 {
        match self {
            Stage::Started | Stage::Skipped => 0.0,
            Stage::GroupsSelected => 0.1,
            Stage::DatasheetsRetrieved => 0.4,
            Stage::Reviewed => 0.8,
            Stage::ErrorsGrouped => 0.9,
            Stage::Posted => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub page_id: String,
    pub stage: Stage,
    pub fraction: f64,
}

impl ProgressEvent {
    pub fn new(page_id: impl Into<String>, stage: Stage) -> Self {
        Self {
            page_id: page_id.into(),
            stage,
            fraction: stage.fraction(),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("review sink unreachable: {0}")]
    SinkUnreachable(String),
    #[error("writing review output: {0}")]
    Io(String),
}
