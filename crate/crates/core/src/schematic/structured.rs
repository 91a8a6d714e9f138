//! Structured-pages JSON document, version 1.
//!
//! ```text
//! { "version": 1,
//!   "format": "structured_pages" | "dehdl",          (optional)
//!   "pages": [ { "id", "components": [...], "nets": [...], "annotations": [...],
//!                "wires": [[x1,y1,x2,y2]], "junctions": [[x,y]], "extent": [x0,y0,x1,y1] } ],
//!   "sidecars": { "pstxnet": "..." } }                (optional)
//! ```

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{
    canonicalize_nets, Annotation, AnnotationKind, Component, Net, NetNode, Page, Pin, Schematic,
    SchematicError, SidecarKind, SourceFormat, Wire,
};
use crate::geometry::{BBox, Point};

#[derive(Deserialize)]
struct Document {
    version: u32,
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    pages: Vec<DocPage>,
    #[serde(default)]
    sidecars: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct DocPage {
    id: String,
    #[serde(default)]
    components: Vec<DocComponent>,
    #[serde(default)]
    nets: Vec<DocNet>,
    #[serde(default)]
    annotations: Vec<DocAnnotation>,
    #[serde(default)]
    wires: Vec<[f64; 4]>,
    #[serde(default)]
    junctions: Vec<[f64; 2]>,
    #[serde(default)]
    extent: Option<BBox>,
}

#[derive(Deserialize)]
struct DocComponent {
    designator: String,
    #[serde(default)]
    mpn: Option<String>,
    #[serde(default)]
    ipn: Option<String>,
    #[serde(default)]
    datasheet_url: Option<String>,
    #[serde(default)]
    pins: Vec<DocPin>,
    #[serde(default)]
    bbox: Option<BBox>,
}

#[derive(Deserialize)]
struct DocPin {
    designator: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    at: Option<[f64; 2]>,
}

#[derive(Deserialize)]
struct DocNet {
    name: String,
    nodes: Vec<(String, String)>,
}

#[derive(Deserialize)]
struct DocAnnotation {
    text: String,
    bbox: BBox,
    #[serde(default)]
    kind: AnnotationKind,
}

/// Reads the `format` field without decoding the whole document.
pub(crate) fn sniff_format(raw: &[u8]) -> Option<SourceFormat> {
    #[derive(Deserialize)]
    struct Head {
        #[serde(default)]
        format: Option<String>,
        #[allow(dead_code)]
        version: serde_json::Value,
    }
    let head: Head = serde_json::from_slice(raw).ok()?;
    match head.format.as_deref() {
        None => Some(SourceFormat::StructuredPages),
        Some(f) => f.parse().ok(),
    }
}

pub(crate) fn parse_document(raw: &[u8], format: SourceFormat) -> Result<Schematic, SchematicError> {
    let doc: Document = serde_json::from_slice(raw)
        .map_err(|e| SchematicError::malformed(Some(json_offset(raw, &e)), e.to_string()))?;
    if doc.version != 1 {
        return Err(SchematicError::malformed(
            None,
            format!("unsupported document version {}", doc.version),
        ));
    }
    if let Some(f) = &doc.format {
        let declared: SourceFormat = f.parse().map_err(|m: String| SchematicError::malformed(None, m))?;
        if declared == SourceFormat::KicadSubset {
            return Err(SchematicError::malformed(
                None,
                "a JSON document cannot declare the kicad_subset format",
            ));
        }
    }

    let mut sidecars = BTreeMap::new();
    for (kind, text) in doc.sidecars {
        match kind.as_str() {
            "pstxnet" => {
                sidecars.insert(SidecarKind::Pstxnet, text);
            }
            other => {
                return Err(SchematicError::malformed(
                    None,
                    format!("unknown sidecar kind `{other}`"),
                ))
            }
        }
    }

    let pages = doc.pages.into_iter().map(convert_page).collect();
    Ok(Schematic {
        format,
        pages,
        sidecars,
    })
}

fn convert_page(p: DocPage) -> Page {
    let components = p
        .components
        .into_iter()
        .map(|c| Component {
            designator: c.designator,
            mpn: c.mpn,
            ipn: c.ipn,
            datasheet_url: c.datasheet_url,
            pins: c
                .pins
                .into_iter()
                .map(|p| Pin {
                    designator: p.designator,
                    name: p.name,
                    at: p.at.map(|[x, y]| Point::new(x, y)),
                })
                .collect(),
            bbox: c.bbox,
        })
        .collect();
    let mut nets: Vec<Net> = p
        .nets
        .into_iter()
        .map(|n| {
            Net::new(
                n.name,
                n.nodes.into_iter().map(|(d, pin)| NetNode::new(d, pin)).collect(),
            )
        })
        .collect();
    canonicalize_nets(&mut nets);
    Page {
        id: p.id,
        components,
        nets,
        annotations: p
            .annotations
            .into_iter()
            .map(|a| Annotation {
                text: a.text,
                bbox: a.bbox,
                kind: a.kind,
            })
            .collect(),
        wires: p
            .wires
            .into_iter()
            .map(|[x1, y1, x2, y2]| Wire {
                from: Point::new(x1, y1),
                to: Point::new(x2, y2),
            })
            .collect(),
        junctions: p.junctions.into_iter().map(|[x, y]| Point::new(x, y)).collect(),
        extent: p.extent,
        strategy: None,
    }
}

/// Converts serde_json's line/column into a byte offset.
fn json_offset(raw: &[u8], e: &serde_json::Error) -> usize {
    let (line, col) = (e.line(), e.column());
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in raw.split(|b| *b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + col.saturating_sub(1)).min(raw.len());
        }
        offset += l.len() + 1;
    }
    raw.len()
}
