//! KiCad-style s-expression subset.
//!
//! Only connectivity-relevant forms are read; everything else is skipped.
//!
//! ```text
//! (kicad_sch
//!   (page "P1" ITEM...)          ; zero or more pages
//!   ITEM...)                     ; top-level items belong to an implicit page "1"
//!
//! ITEM := (symbol "U1" (mpn "..") (ipn "..") (datasheet "..") (bbox x0 y0 x1 y1)
//!             (pin "1" (name "VIN") (at x y)) ...)
//!       | (wire (pts (xy x y) (xy x y) ...))
//!       | (label "NET" (at x y))            ; also global_label / hierarchical_label
//!       | (junction (at x y))
//!       | (text "note" (at x y))
//!       | (net "NAME" (node "U1" "1") ...)  ; explicit net data
//!       | (extent x0 y0 x1 y1)
//! ```
//!
//! `(property "Reference" ..)`, `(property "MPN" ..)`, `(property "IPN" ..)` and
//! `(property "Datasheet" ..)` are accepted inside a symbol as alternatives to
//! the positional designator and the `mpn`/`ipn`/`datasheet` forms. When a page
//! has no explicit `net` forms, its nets are traced from wires and labels.

use super::sexpr::{self, Sexp};
use super::{
    canonicalize_nets, trace_connectivity, Annotation, AnnotationKind, Component, Net, NetNode,
    Page, Pin, Schematic, SchematicError, SourceFormat, Wire,
};
use crate::geometry::{BBox, Point};

pub(crate) fn parse_kicad(text: &str) -> Result<Schematic, SchematicError> {
    let root = sexpr::parse(text)?;
    if root.head() != Some("kicad_sch") {
        return Err(SchematicError::malformed(
            Some(root.offset()),
            "expected `(kicad_sch ...)` at top level",
        ));
    }
    let mut pages = Vec::new();
    let mut implicit = PageBuilder::new("1".to_string());
    for item in root.args() {
        if item.head() == Some("page") {
            let id = string_arg(item, 0, "page id")?;
            let mut b = PageBuilder::new(id);
            for sub in item.args().iter().skip(1) {
                b.item(sub)?;
            }
            pages.push(b.finish()?);
        } else {
            implicit.item(item)?;
        }
    }
    if !implicit.is_empty() {
        pages.insert(0, implicit.finish()?);
    }
    Ok(Schematic {
        format: SourceFormat::KicadSubset,
        pages,
        sidecars: Default::default(),
    })
}

struct PageBuilder {
    page: Page,
    explicit_nets: bool,
    wire_offsets: Vec<usize>,
}

impl PageBuilder {
    fn new(id: String) -> Self {
        Self {
            page: Page {
                id,
                ..Default::default()
            },
            explicit_nets: false,
            wire_offsets: Vec::new(),
        }
    }

    fn is_empty(&self) -> bool {
        let p = &self.page;
        p.components.is_empty()
            && p.wires.is_empty()
            && p.annotations.is_empty()
            && p.nets.is_empty()
            && p.junctions.is_empty()
    }

    fn item(&mut self, item: &Sexp) -> Result<(), SchematicError> {
        match item.head() {
            Some("symbol") => self.page.components.push(symbol(item)?),
            Some("wire") => {
                let pts = item
                    .child("pts")
                    .ok_or_else(|| SchematicError::malformed(Some(item.offset()), "wire without pts"))?;
                let points = pts
                    .children("xy")
                    .map(|xy| point_args(xy, 0))
                    .collect::<Result<Vec<_>, _>>()?;
                if points.len() < 2 {
                    return Err(SchematicError::malformed(
                        Some(item.offset()),
                        "wire needs at least two points",
                    ));
                }
                for seg in points.windows(2) {
                    self.page.wires.push(Wire {
                        from: seg[0],
                        to: seg[1],
                    });
                    self.wire_offsets.push(item.offset());
                }
            }
            Some("label") | Some("global_label") | Some("hierarchical_label") | Some("text") => {
                let text = string_arg(item, 0, "label text")?;
                let at = at_of(item)?.ok_or_else(|| {
                    SchematicError::malformed(Some(item.offset()), "label without (at x y)")
                })?;
                let kind = if item.head() == Some("text") {
                    AnnotationKind::Note
                } else {
                    AnnotationKind::Label
                };
                self.page.annotations.push(Annotation {
                    text,
                    bbox: BBox::at(at),
                    kind,
                });
            }
            Some("junction") => {
                let at = at_of(item)?.ok_or_else(|| {
                    SchematicError::malformed(Some(item.offset()), "junction without (at x y)")
                })?;
                self.page.junctions.push(at);
            }
            Some("net") => {
                self.explicit_nets = true;
                let name = string_arg(item, 0, "net name")?;
                let nodes = item
                    .children("node")
                    .map(|n| Ok(NetNode::new(string_arg(n, 0, "node designator")?, string_arg(n, 1, "node pin")?)))
                    .collect::<Result<Vec<_>, SchematicError>>()?;
                self.page.nets.push(Net::new(name, nodes));
            }
            Some("extent") => self.page.extent = Some(bbox_args(item)?),
            _ => {}
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Page, SchematicError> {
        if !self.explicit_nets && (!self.page.wires.is_empty() || !self.page.annotations.is_empty()) {
            let traced = trace_connectivity(&self.page);
            if let Some(p) = traced.dangling.first() {
                let offset = self
                    .page
                    .wires
                    .iter()
                    .position(|w| w.from == *p || w.to == *p)
                    .map(|i| self.wire_offsets[i]);
                return Err(SchematicError::malformed(
                    offset,
                    format!("dangling wire endpoint at ({}, {})", p.x, p.y),
                ));
            }
            self.page.nets = traced.nets;
        }
        canonicalize_nets(&mut self.page.nets);
        Ok(self.page)
    }
}

fn symbol(item: &Sexp) -> Result<Component, SchematicError> {
    let mut c = Component::default();
    if let Some(Sexp::Atom { text, .. }) = item.args().first() {
        c.designator = text.clone();
    }
    for prop in item.children("property") {
        let key = string_arg(prop, 0, "property name")?;
        let value = string_arg(prop, 1, "property value")?;
        match key.as_str() {
            "Reference" => c.designator = value,
            "MPN" => c.mpn = Some(value),
            "IPN" => c.ipn = Some(value),
            "Datasheet" if !value.is_empty() && value != "~" => c.datasheet_url = Some(value),
            _ => {}
        }
    }
    if let Some(m) = item.child("mpn") {
        c.mpn = Some(string_arg(m, 0, "mpn")?);
    }
    if let Some(m) = item.child("ipn") {
        c.ipn = Some(string_arg(m, 0, "ipn")?);
    }
    if let Some(m) = item.child("datasheet") {
        c.datasheet_url = Some(string_arg(m, 0, "datasheet")?);
    }
    if let Some(b) = item.child("bbox") {
        c.bbox = Some(bbox_args(b)?);
    }
    for p in item.children("pin") {
        c.pins.push(Pin {
            designator: string_arg(p, 0, "pin designator")?,
            name: p.child("name").map(|n| string_arg(n, 0, "pin name")).transpose()?,
            at: at_of(p)?,
        });
    }
    if c.designator.is_empty() {
        return Err(SchematicError::malformed(
            Some(item.offset()),
            "symbol without designator",
        ));
    }
    Ok(c)
}

fn string_arg(item: &Sexp, idx: usize, what: &str) -> Result<String, SchematicError> {
    item.args()
        .get(idx)
        .and_then(Sexp::as_atom)
        .map(str::to_string)
        .ok_or_else(|| SchematicError::malformed(Some(item.offset()), format!("missing {what}")))
}

fn number(s: &Sexp) -> Result<f64, SchematicError> {
    s.as_atom()
        .and_then(|t| t.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| SchematicError::malformed(Some(s.offset()), "expected a number"))
}

fn point_args(item: &Sexp, start: usize) -> Result<Point, SchematicError> {
    let args = item.args();
    if args.len() < start + 2 {
        return Err(SchematicError::malformed(Some(item.offset()), "expected x y"));
    }
    Ok(Point::new(number(&args[start])?, number(&args[start + 1])?))
}

fn bbox_args(item: &Sexp) -> Result<BBox, SchematicError> {
    let args = item.args();
    if args.len() < 4 {
        return Err(SchematicError::malformed(Some(item.offset()), "expected x0 y0 x1 y1"));
    }
    Ok(BBox::new(
        number(&args[0])?,
        number(&args[1])?,
        number(&args[2])?,
        number(&args[3])?,
    ))
}

fn at_of(item: &Sexp) -> Result<Option<Point>, SchematicError> {
    item.child("at").map(|a| point_args(a, 0)).transpose()
}
