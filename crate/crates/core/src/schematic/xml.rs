//! Canonical XML rendering of an augmented schematic.
//!
//! The schema ships as `schemas/schematic.v1.xsd`. Components are ordered by
//! designator, pins by designator, nets by name, nodes by (designator, pin)
//! and annotations by (text, box); attributes are sorted by name. Wire and
//! junction geometry is not rendered: it is fully captured by the nets.

use std::collections::HashMap;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{
    AnnotationKind, AugmentationStrategy, Annotation, Component, Net, NetNode, Page, Pin, Schematic,
    SchematicError, SourceFormat,
};
use crate::geometry::BBox;
use crate::natural::natural_cmp;
use crate::xmlw::{num, s, XmlWriter};

pub fn serialize_xml(sch: &Schematic) -> String {
    let mut w = XmlWriter::new();
    let attrs = vec![("format", s(sch.format.as_str())), ("version", s("1"))];
    if w.open_or_empty("schematic", attrs, !sch.pages.is_empty()) {
        for page in &sch.pages {
            write_page(&mut w, page);
        }
        w.close("schematic");
    }
    w.finish()
}

/// The `<page>` element alone, without XML declaration. Page hashes and
/// agent payloads are built from this fragment.
pub fn serialize_page_xml(page: &Page) -> String {
    let mut w = XmlWriter::fragment();
    write_page(&mut w, page);
    w.finish()
}

fn bbox(w: &mut XmlWriter, b: &BBox) {
    w.empty(
        "bbox",
        vec![
            ("x0", Some(num(b.x0))),
            ("x1", Some(num(b.x1))),
            ("y0", Some(num(b.y0))),
            ("y1", Some(num(b.y1))),
        ],
    );
}

fn write_page(w: &mut XmlWriter, page: &Page) {
    let attrs = vec![
        ("id", s(&page.id)),
        ("strategy", page.strategy.map(|st| st.as_str().to_string())),
    ];
    let has = !(page.components.is_empty() && page.nets.is_empty() && page.annotations.is_empty());
    if !w.open_or_empty("page", attrs, has) {
        return;
    }
    let mut comps: Vec<&Component> = page.components.iter().collect();
    comps.sort_by(|a, b| natural_cmp(&a.designator, &b.designator));
    for c in comps {
        let attrs = vec![
            ("datasheet_url", c.datasheet_url.clone()),
            ("designator", s(&c.designator)),
            ("ipn", c.ipn.clone()),
            ("mpn", c.mpn.clone()),
        ];
        if w.open_or_empty("component", attrs, c.bbox.is_some() || !c.pins.is_empty()) {
            if let Some(b) = &c.bbox {
                bbox(w, b);
            }
            let mut pins: Vec<_> = c.pins.iter().collect();
            pins.sort_by(|a, b| natural_cmp(&a.designator, &b.designator));
            for p in pins {
                w.empty("pin", vec![("designator", s(&p.designator)), ("name", p.name.clone())]);
            }
            w.close("component");
        }
    }
    let mut nets: Vec<&Net> = page.nets.iter().collect();
    nets.sort_by(|a, b| natural_cmp(&a.name, &b.name));
    for n in nets {
        if w.open_or_empty("net", vec![("name", s(&n.name))], !n.nodes.is_empty()) {
            let mut nodes = n.nodes.clone();
            nodes.sort();
            for node in nodes {
                w.empty(
                    "node",
                    vec![("designator", Some(node.designator)), ("pin", Some(node.pin))],
                );
            }
            w.close("net");
        }
    }
    let mut anns: Vec<&Annotation> = page.annotations.iter().collect();
    anns.sort_by(|a, b| {
        natural_cmp(&a.text, &b.text).then_with(|| {
            let ka: [f64; 4] = a.bbox.into();
            let kb: [f64; 4] = b.bbox.into();
            ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    for a in anns {
        let kind = match a.kind {
            super::AnnotationKind::Label => "label",
            super::AnnotationKind::Note => "note",
        };
        w.open("annotation", vec![("kind", s(kind)), ("text", s(&a.text))]);
        bbox(w, &a.bbox);
        w.close("annotation");
    }
    w.close("page");
}

fn xml_err(reader: &Reader<&[u8]>, message: impl Into<String>) -> SchematicError {
    SchematicError::malformed(Some(reader.buffer_position() as usize), message)
}

fn attr_map(reader: &Reader<&[u8]>, e: &BytesStart<'_>) -> Result<HashMap<String, String>, SchematicError> {
    let mut out = HashMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| xml_err(reader, err.to_string()))?;
        let v = a.unescape_value().map_err(|err| xml_err(reader, err.to_string()))?;
        out.insert(String::from_utf8_lossy(a.key.as_ref()).into_owned(), v.into_owned());
    }
    Ok(out)
}

fn take(a: &mut HashMap<String, String>, reader: &Reader<&[u8]>, k: &str) -> Result<String, SchematicError> {
    a.remove(k)
        .ok_or_else(|| xml_err(reader, format!("missing attribute `{k}`")))
}

enum Open {
    Component(Component),
    Net(Net),
    Annotation(Annotation),
}

/// Reads canonical XML back: either a full `<schematic>` document or a
/// single `<page>` fragment (returned as a one-page schematic of format
/// `structured_pages`). Wire geometry is not part of the XML, so it is not
/// recovered.
pub fn parse_xml(xml: &str) -> Result<Schematic, SchematicError> {
    let mut reader = Reader::from_str(xml);
    let mut sch = Schematic {
        format: SourceFormat::StructuredPages,
        pages: Vec::new(),
        sidecars: Default::default(),
    };
    let mut page: Option<Page> = None;
    let mut open: Option<Open> = None;
    loop {
        let ev = reader.read_event().map_err(|e| xml_err(&reader, e.to_string()))?;
        let (e, empty) = match &ev {
            Event::Eof => break,
            Event::Start(e) => (e.clone(), false),
            Event::Empty(e) => (e.clone(), true),
            Event::End(e) => {
                match e.name().as_ref() {
                    b"page" => sch.pages.extend(page.take()),
                    b"component" | b"net" | b"annotation" => close(&mut page, open.take()),
                    _ => {}
                }
                continue;
            }
            _ => continue,
        };
        let mut a = attr_map(&reader, &e)?;
        match e.name().as_ref() {
            b"schematic" => {
                if let Some(f) = a.get("format") {
                    sch.format = f.parse().map_err(|m: String| xml_err(&reader, m))?;
                }
            }
            b"page" => {
                let strategy = match a.get("strategy").map(String::as_str) {
                    None => None,
                    Some("embedded_nets") => Some(AugmentationStrategy::EmbeddedNets),
                    Some("pstxnet_sidecar") => Some(AugmentationStrategy::PstxnetSidecar),
                    Some("wire_trace_inference") => Some(AugmentationStrategy::WireTraceInference),
                    Some(o) => return Err(xml_err(&reader, format!("unknown strategy `{o}`"))),
                };
                page = Some(Page {
                    id: take(&mut a, &reader, "id")?,
                    strategy,
                    ..Default::default()
                });
                if empty {
                    sch.pages.extend(page.take());
                }
            }
            b"component" => {
                let c = Component {
                    designator: take(&mut a, &reader, "designator")?,
                    mpn: a.remove("mpn"),
                    ipn: a.remove("ipn"),
                    datasheet_url: a.remove("datasheet_url"),
                    ..Default::default()
                };
                open = Some(Open::Component(c));
                if empty {
                    close(&mut page, open.take());
                }
            }
            b"pin" => {
                let pin = Pin {
                    designator: take(&mut a, &reader, "designator")?,
                    name: a.remove("name"),
                    at: None,
                };
                match open.as_mut() {
                    Some(Open::Component(c)) => c.pins.push(pin),
                    _ => return Err(xml_err(&reader, "<pin> outside <component>")),
                }
            }
            b"net" => {
                open = Some(Open::Net(Net {
                    name: take(&mut a, &reader, "name")?,
                    nodes: vec![],
                }));
                if empty {
                    close(&mut page, open.take());
                }
            }
            b"node" => {
                let node = NetNode::new(take(&mut a, &reader, "designator")?, take(&mut a, &reader, "pin")?);
                match open.as_mut() {
                    Some(Open::Net(n)) => n.nodes.push(node),
                    _ => return Err(xml_err(&reader, "<node> outside <net>")),
                }
            }
            b"annotation" => {
                let kind = match a.get("kind").map(String::as_str) {
                    Some("note") => AnnotationKind::Note,
                    _ => AnnotationKind::Label,
                };
                open = Some(Open::Annotation(Annotation {
                    text: take(&mut a, &reader, "text")?,
                    bbox: BBox::new(0.0, 0.0, 0.0, 0.0),
                    kind,
                }));
            }
            b"bbox" => {
                let mut num = |k: &str| -> Result<f64, SchematicError> {
                    take(&mut a, &reader, k)?
                        .parse::<f64>()
                        .map_err(|_| xml_err(&reader, format!("`{k}` is not a number")))
                };
                let b = BBox::new(num("x0")?, num("y0")?, num("x1")?, num("y1")?);
                match open.as_mut() {
                    Some(Open::Component(c)) => c.bbox = Some(b),
                    Some(Open::Annotation(an)) => an.bbox = b,
                    _ => return Err(xml_err(&reader, "<bbox> outside component or annotation")),
                }
            }
            other => {
                return Err(xml_err(
                    &reader,
                    format!("unexpected element <{}>", String::from_utf8_lossy(other)),
                ))
            }
        }
    }
    if page.is_some() || open.is_some() {
        return Err(xml_err(&reader, "unexpected end of document"));
    }
    Ok(sch)
}

fn close(page: &mut Option<Page>, open: Option<Open>) {
    let (Some(p), Some(o)) = (page.as_mut(), open) else { return };
    match o {
        Open::Component(c) => p.components.push(c),
        Open::Net(n) => p.nets.push(n),
        Open::Annotation(a) => p.annotations.push(a),
    }
}
