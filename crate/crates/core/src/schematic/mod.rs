//! Connectivity model of a schematic: pages, components, pins and nets.
//!
//! Inputs arrive as a structured-pages JSON document, a KiCad-style
//! s-expression subset, or a DE-HDL page set with a `pstxnet.dat` sidecar.
//! [`augment_netlist`] fills in page nets using a strategy chosen from the
//! source format, and [`serialize_xml`] renders the canonical XML that
//! downstream agents consume and that page hashing is based on.

mod augment;
mod diff;
mod ingest;
mod kicad;
mod pstxnet;
mod sexpr;
mod structured;
mod wiretrace;
mod xml;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Point};
use crate::natural::natural_cmp;

pub use augment::augment_netlist;
pub use diff::{diff_pages, page_hash};
pub use ingest::ingest_schematic;
pub use pstxnet::{parse_pstxnet, render_pstxnet};
pub use wiretrace::{trace_connectivity, TraceOutcome};
pub use xml::{parse_xml, serialize_page_xml, serialize_xml};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    StructuredPages,
    KicadSubset,
    DeHdl,
}

impl SourceFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceFormat::StructuredPages => "structured_pages",
            SourceFormat::KicadSubset => "kicad_subset",
            SourceFormat::DeHdl => "dehdl",
        }
    }
}

impl std::str::FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "structured_pages" | "structured" | "json" => Ok(SourceFormat::StructuredPages),
            "kicad_subset" | "kicad" => Ok(SourceFormat::KicadSubset),
            "dehdl" | "de_hdl" => Ok(SourceFormat::DeHdl),
            other => Err(format!("unknown source format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidecarKind {
    Pstxnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationStrategy {
    EmbeddedNets,
    PstxnetSidecar,
    /// Connectivity recovered from wire geometry, junctions and labels.
    WireTraceInference,
}

impl AugmentationStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentationStrategy::EmbeddedNets => "embedded_nets",
            AugmentationStrategy::PstxnetSidecar => "pstxnet_sidecar",
            AugmentationStrategy::WireTraceInference => "wire_trace_inference",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schematic {
    pub format: SourceFormat,
    pub pages: Vec<Page>,
    pub sidecars: BTreeMap<SidecarKind, String>,
}

impl Schematic {
    pub fn page(&self, id: &str) -> Option<&Page> {
        self.pages.iter().find(|p| p.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Page {
    pub id: String,
    pub components: Vec<Component>,
    pub nets: Vec<Net>,
    pub annotations: Vec<Annotation>,
    pub wires: Vec<Wire>,
    pub junctions: Vec<Point>,
    /// Drawing extents; derived from content geometry when absent.
    pub extent: Option<BBox>,
    /// Set once the page has been augmented.
    pub strategy: Option<AugmentationStrategy>,
}

impl Page {
    pub fn component(&self, designator: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.designator == designator)
    }

    /// Names of nets attached to `(designator, pin)`, sorted.
    pub fn nets_of_pin(&self, designator: &str, pin: &str) -> Vec<String> {
        self.nets
            .iter()
            .filter(|n| n.nodes.iter().any(|nd| nd.designator == designator && nd.pin == pin))
            .map(|n| n.name.clone())
            .collect()
    }

    /// Page extents: the explicit extent if given, otherwise the union of all
    /// component, annotation and wire geometry (and the origin).
    pub fn extents(&self) -> BBox {
        if let Some(e) = self.extent {
            return e;
        }
        let mut boxes: Vec<BBox> = vec![BBox::at(Point::new(0.0, 0.0))];
        boxes.extend(self.components.iter().filter_map(|c| c.bbox));
        boxes.extend(self.annotations.iter().map(|a| a.bbox));
        for w in &self.wires {
            boxes.push(BBox::new(w.from.x, w.from.y, w.to.x, w.to.y));
        }
        for c in &self.components {
            boxes.extend(c.pins.iter().filter_map(|p| p.at.map(BBox::at)));
        }
        BBox::union_all(boxes.iter()).expect("non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Component {
    pub designator: String,
    pub mpn: Option<String>,
    pub ipn: Option<String>,
    pub datasheet_url: Option<String>,
    pub pins: Vec<Pin>,
    pub bbox: Option<BBox>,
}

impl Component {
    pub fn pin(&self, designator: &str) -> Option<&Pin> {
        self.pins.iter().find(|p| p.designator == designator)
    }

    /// Part number used for datasheet lookup: MPN when present, else IPN.
    pub fn part_number(&self) -> Option<&str> {
        self.mpn
            .as_deref()
            .filter(|s| !s.is_empty())
            .or(self.ipn.as_deref().filter(|s| !s.is_empty()))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pin {
    pub designator: String,
    pub name: Option<String>,
    /// Connection point, used by wire tracing.
    pub at: Option<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    #[default]
    Label,
    Note,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub text: String,
    pub bbox: BBox,
    pub kind: AnnotationKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wire {
    pub from: Point,
    pub to: Point,
}

/// A `(component designator, pin designator)` pair on a net.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetNode {
    pub designator: String,
    pub pin: String,
}

impl NetNode {
    pub fn new(designator: impl Into<String>, pin: impl Into<String>) -> Self {
        Self {
            designator: designator.into(),
            pin: pin.into(),
        }
    }
}

impl Ord for NetNode {
    fn cmp(&self, other: &Self) -> Ordering {
        natural_cmp(&self.designator, &other.designator)
            .then_with(|| natural_cmp(&self.pin, &other.pin))
    }
}

impl PartialOrd for NetNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Net {
    pub name: String,
    pub nodes: Vec<NetNode>,
}

impl Net {
    /// Builds a net with nodes in canonical order, duplicates removed.
    pub fn new(name: impl Into<String>, mut nodes: Vec<NetNode>) -> Self {
        nodes.sort();
        nodes.dedup();
        Self {
            name: name.into(),
            nodes,
        }
    }
}

/// Sorts nets by name and their nodes canonically.
pub fn canonicalize_nets(nets: &mut [Net]) {
    for n in nets.iter_mut() {
        n.nodes.sort();
        n.nodes.dedup();
    }
    nets.sort_by(|a, b| natural_cmp(&a.name, &b.name));
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchematicError {
    #[error("malformed input{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    MalformedInput {
        offset: Option<usize>,
        message: String,
    },
    #[error("unknown schematic format: no hint given and no format signature matched")]
    UnknownFormat,
    #[error("malformed pstxnet block at line {line}: {message}")]
    MalformedNetBlock { line: usize, message: String },
    #[error("duplicate net name `{0}` in pstxnet")]
    DuplicateNetName(String),
    #[error("DE-HDL schematic has no pstxnet sidecar")]
    MissingSidecar,
    #[error("wire tracing on page `{page}` found dangling wire endpoints: {}", format_points(points))]
    InferenceFailed { page: String, points: Vec<Point> },
    #[error("net `{net}` references {designator}.{pin}, which is not on any page")]
    UnresolvedNode {
        net: String,
        designator: String,
        pin: String,
    },
}

fn format_points(points: &[Point]) -> String {
    points
        .iter()
        .map(|p| format!("({}, {})", p.x, p.y))
        .collect::<Vec<_>>()
        .join(", ")
}

impl SchematicError {
    pub(crate) fn malformed(offset: Option<usize>, message: impl Into<String>) -> Self {
        SchematicError::MalformedInput {
            offset,
            message: message.into(),
        }
    }
}

/// Checks the structural invariants shared by every ingest path.
pub(crate) fn validate(s: &Schematic) -> Result<(), SchematicError> {
    let mut page_ids = std::collections::HashSet::new();
    for page in &s.pages {
        if page.id.is_empty() {
            return Err(SchematicError::malformed(None, "page with empty id"));
        }
        if !page_ids.insert(page.id.as_str()) {
            return Err(SchematicError::malformed(
                None,
                format!("duplicate page id `{}`", page.id),
            ));
        }
        let mut designators = std::collections::HashSet::new();
        for c in &page.components {
            if c.designator.is_empty() {
                return Err(SchematicError::malformed(
                    None,
                    format!("page `{}`: component with empty designator", page.id),
                ));
            }
            if !designators.insert(c.designator.as_str()) {
                return Err(SchematicError::malformed(
                    None,
                    format!("page `{}`: duplicate designator `{}`", page.id, c.designator),
                ));
            }
            let mut pins = std::collections::HashSet::new();
            for p in &c.pins {
                if p.designator.is_empty() {
                    return Err(SchematicError::malformed(
                        None,
                        format!("page `{}`: {} has a pin with empty designator", page.id, c.designator),
                    ));
                }
                if !pins.insert(p.designator.as_str()) {
                    return Err(SchematicError::malformed(
                        None,
                        format!(
                            "page `{}`: {} has duplicate pin `{}`",
                            page.id, c.designator, p.designator
                        ),
                    ));
                }
            }
        }
        let mut net_names = std::collections::HashSet::new();
        for n in &page.nets {
            if !net_names.insert(n.name.as_str()) {
                return Err(SchematicError::malformed(
                    None,
                    format!("page `{}`: duplicate net `{}`", page.id, n.name),
                ));
            }
            for node in &n.nodes {
                let ok = page
                    .component(&node.designator)
                    .is_some_and(|c| c.pin(&node.pin).is_some());
                if !ok {
                    return Err(SchematicError::malformed(
                        None,
                        format!(
                            "page `{}`: net `{}` references unknown pin {}.{}",
                            page.id, n.name, node.designator, node.pin
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}
