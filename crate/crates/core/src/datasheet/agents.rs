//! The three weak-tier datasheet agents: head analysis, extraction, critic.

use serde::Deserialize;
use serde_json::json;

use super::{
    CriticScore, DatasheetDocument, DatasheetError, DatasheetSpec, OperatingCondition, PartRef,
    PinSpec, Rating,
};
use crate::gateway::{system_prompt, AgentKind, AgentRequest, LlmGateway};

/// Upper bound on pages passed to extraction.
pub const HEAD_PAGE_BUDGET: usize = 12;

const PREVIEW_CHARS: usize = 300;

fn request(kind: AgentKind, payload: serde_json::Value, span: Option<&str>) -> AgentRequest {
    let req = AgentRequest::new(kind, system_prompt(kind), payload.to_string());
    match span {
        Some(s) => req.with_span(format!("{s}/{kind}")),
        None => req,
    }
}

#[derive(Deserialize)]
struct HeadOutput {
    pages: Vec<i64>,
}

/// Page indices worth extracting: in range, unique, ascending and at most
/// [`HEAD_PAGE_BUDGET`]. Single-page documents skip the agent. An answer
/// with no usable index falls back to the leading pages.
pub async fn analyze_head(
    gateway: &LlmGateway,
    part: &PartRef,
    doc: &DatasheetDocument,
    span: Option<&str>,
) -> Result<Vec<usize>, DatasheetError> {
    let n = doc.pages.len();
    if n <= 1 {
        return Ok(vec![0]);
    }
    let previews: Vec<_> = doc
        .pages
        .iter()
        .enumerate()
        .map(|(i, p)| json!({"index": i, "preview": p.text.trim().chars().take(PREVIEW_CHARS).collect::<String>()}))
        .collect();
    let payload = json!({
        "part": part.key(),
        "source_url": doc.source_url,
        "page_count": n,
        "toc": doc.toc,
        "pages": previews,
    });
    let (out, _) = gateway
        .complete_typed::<HeadOutput>(&request(AgentKind::HeadAnalysis, payload, span))
        .await?;
    Ok(clamp_pages(&out.pages, n))
}

pub(crate) fn clamp_pages(raw: &[i64], n: usize) -> Vec<usize> {
    let mut pages: Vec<usize> = raw
        .iter()
        .filter_map(|&i| usize::try_from(i).ok())
        .filter(|&i| i < n)
        .collect();
    pages.sort_unstable();
    pages.dedup();
    pages.truncate(HEAD_PAGE_BUDGET);
    if pages.is_empty() {
        pages = (0..n.min(HEAD_PAGE_BUDGET)).collect();
    }
    pages
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExtractionOutput {
    pub pins: Vec<PinSpec>,
    #[serde(default)]
    pub abs_max_ratings: Vec<Rating>,
    #[serde(default)]
    pub rec_operating: Vec<OperatingCondition>,
    #[serde(default)]
    pub blocks: Vec<String>,
    #[serde(default)]
    pub app_circuits: Vec<String>,
}

pub async fn extract_spec(
    gateway: &LlmGateway,
    part: &PartRef,
    doc: &DatasheetDocument,
    selected: &[usize],
    span: Option<&str>,
) -> Result<DatasheetSpec, DatasheetError> {
    let pages: Vec<_> = selected
        .iter()
        .filter_map(|&i| doc.pages.get(i).map(|p| json!({"index": i, "text": p.text})))
        .collect();
    let payload = json!({
        "part": part.key(),
        "source_url": doc.source_url,
        "pages": pages,
    });
    let (out, _) = gateway
        .complete_typed::<ExtractionOutput>(&request(AgentKind::Extraction, payload, span))
        .await?;
    Ok(DatasheetSpec {
        part: part.clone(),
        source_url: doc.source_url.clone(),
        pins: out.pins,
        abs_max_ratings: out.abs_max_ratings,
        rec_operating: out.rec_operating,
        blocks: out.blocks,
        app_circuits: out.app_circuits,
    })
}

#[derive(Deserialize)]
struct CriticOutput {
    feature_completeness: u8,
    pin_function_coverage: u8,
    application_information: u8,
    typical_application_circuits: u8,
}

/// Scores an extraction. Only the sub-scores come from the agent; the
/// weighted total is computed locally.
pub async fn critique(
    gateway: &LlmGateway,
    spec: &DatasheetSpec,
    span: Option<&str>,
) -> Result<CriticScore, DatasheetError> {
    let payload = json!({
        "part": spec.part.key(),
        "source_url": spec.source_url,
        "spec_xml": spec.to_xml(),
    });
    let (o, _) = gateway
        .complete_typed::<CriticOutput>(&request(AgentKind::Critic, payload, span))
        .await?;
    Ok(CriticScore::new(
        o.feature_completeness,
        o.pin_function_coverage,
        o.application_information,
        o.typical_application_circuits,
    ))
}
