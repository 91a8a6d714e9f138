//! Pure rendering of comments and overlays.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::ReviewComment;
use crate::datasheet::DatasheetSpec;
use crate::geometry::BBox;
use crate::natural::natural_cmp;
use crate::review::{Confidence, ErrorGroup};
use crate::schematic::Page;
use crate::xmlw::{num, s, XmlWriter};

fn cell(text: &str) -> String {
    text.trim()
        .replace('\\', "\\\\")
        .replace('|', "\\|")
        .replace("\r\n", "<br>")
        .replace(['\n', '\r'], "<br>")
}

fn confidence(c: Confidence) -> &'static str {
    match c {
        Confidence::High => "high",
        Confidence::Medium => "medium",
        Confidence::Low => "low",
    }
}

/// One comment per error group: a section per member component with a
/// `| Pin | Verdict | Reasoning |` table and a link to the consulted
/// datasheet. The anchor is the union of the member components' boxes.
pub fn render_comment(
    group: &ErrorGroup,
    specs: &BTreeMap<String, Arc<DatasheetSpec>>,
    page: &Page,
) -> ReviewComment {
    let designators = group.designators();
    let mut md = format!("### Design review: {}\n\n", designators.join(", "));
    md.push_str(&format!("**Root cause:** {}\n", group.root_cause_summary.trim()));

    let mut links: Vec<String> = Vec::new();
    for d in &designators {
        let comp = page.component(d);
        let part = comp.and_then(|c| c.part_number());
        md.push_str(&format!("\n#### {d}"));
        if let Some(p) = part {
            md.push_str(&format!(" ({p})"));
        }
        md.push_str("\n\n");
        if let Some(spec) = specs.get(*d) {
            md.push_str(&format!("Datasheet: [{}]({})\n\n", spec.part.key(), spec.source_url));
            if !links.contains(&spec.source_url) {
                links.push(spec.source_url.clone());
            }
        }
        md.push_str("| Pin | Verdict | Reasoning |\n| --- | --- | --- |\n");
        for f in group.findings.iter().filter(|f| f.designator == *d) {
            let f = &f.finding;
            let mut reasoning = cell(&f.reasoning);
            if !f.referenced_nets.is_empty() {
                reasoning.push_str(&format!(" (nets: {})", cell(&f.referenced_nets.join(", "))));
            }
            md.push_str(&format!(
                "| {} | {} | {} _(confidence: {})_ |\n",
                cell(&f.pin_key),
                f.status.label(),
                reasoning,
                confidence(f.confidence)
            ));
        }
    }
    md.push_str(&format!("\n<sub>Error group `{}` on page {}</sub>\n", group.group_id, page.id));

    let boxes: Vec<BBox> = designators
        .iter()
        .filter_map(|d| page.component(d).and_then(|c| c.bbox))
        .collect();
    let anchor = BBox::union_all(boxes.iter());
    ReviewComment {
        page_id: page.id.clone(),
        anchor_bbox: anchor,
        markdown: md,
        datasheet_links: links,
        error_group_id: group.group_id.clone(),
        overlay_svg: anchor.map(|b| render_overlay(page, &b)),
    }
}

const MARGIN: f64 = 10.0;

fn rect(w: &mut XmlWriter, class: &str, b: &BBox, style: Vec<(&str, Option<String>)>) {
    let mut attrs = vec![
        ("class", s(class)),
        ("x", Some(num(b.x0))),
        ("y", Some(num(b.y0))),
        ("width", Some(num(b.width()))),
        ("height", Some(num(b.height()))),
    ];
    attrs.extend(style);
    w.empty("rect", attrs);
}

/// SVG of the page outline, component outlines and a highlight rectangle
/// for `bbox` clamped to the page extents.
pub fn render_overlay(page: &Page, bbox: &BBox) -> String {
    let ext = page.extents();
    let hl = bbox.clamp_to(&ext);
    let mut w = XmlWriter::fragment();
    w.open(
        "svg",
        vec![
            ("xmlns", s("http://www.w3.org/2000/svg")),
            (
                "viewBox",
                Some(format!(
                    "{} {} {} {}",
                    num(ext.x0 - MARGIN),
                    num(ext.y0 - MARGIN),
                    num(ext.width() + 2.0 * MARGIN),
                    num(ext.height() + 2.0 * MARGIN)
                )),
            ),
        ],
    );
    w.text("title", vec![], &format!("Page {}", page.id));
    rect(
        &mut w,
        "page",
        &ext,
        vec![("fill", s("white")), ("stroke", s("black")), ("stroke-width", s("1"))],
    );
    let mut comps: Vec<_> = page.components.iter().filter(|c| c.bbox.is_some()).collect();
    comps.sort_by(|a, b| natural_cmp(&a.designator, &b.designator));
    if w.open_or_empty("g", vec![("class", s("components"))], !comps.is_empty()) {
        for c in comps {
            let b = c.bbox.expect("filtered");
            rect(
                &mut w,
                "component",
                &b,
                vec![("fill", s("none")), ("stroke", s("#555555")), ("stroke-width", s("0.5"))],
            );
            w.text(
                "text",
                vec![
                    ("x", Some(num(b.x0))),
                    ("y", Some(num(b.y0 - 1.0))),
                    ("font-size", s("4")),
                ],
                &c.designator,
            );
        }
        w.close("g");
    }
    rect(
        &mut w,
        "highlight",
        &hl,
        vec![
            ("fill", s("#ff0000")),
            ("fill-opacity", s("0.2")),
            ("stroke", s("#ff0000")),
            ("stroke-width", s("1")),
        ],
    );
    w.close("svg");
    w.finish()
}
