//! Connectivity recovery from wire geometry.
//!
//! Wires, pins and labels are unioned into clusters: a wire endpoint connects
//! to any wire or pin it touches, a junction connects every wire passing
//! through it, and a label attaches to every wire crossing its bounding box
//! and every pin inside it. Labels with identical text join their clusters. Each cluster
//! with at least one pin and any wire, label or second pin becomes a net named after its smallest label, or
//! `N$<counter>` numbered in canonical node order when unlabeled.

use std::collections::BTreeMap;

use super::{canonicalize_nets, AnnotationKind, Net, NetNode, Page};
use crate::geometry::{BBox, Point};
use crate::natural::natural_cmp;
use crate::unionfind::UnionFind;

const EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOutcome {
    pub nets: Vec<Net>,
    /// Wire endpoints touching nothing, in scan order.
    pub dangling: Vec<Point>,
}

fn same(a: Point, b: Point) -> bool {
    (a.x - b.x).abs() <= EPS && (a.y - b.y).abs() <= EPS
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt().max(EPS);
    if cross.abs() / len > EPS {
        return false;
    }
    p.x >= a.x.min(b.x) - EPS
        && p.x <= a.x.max(b.x) + EPS
        && p.y >= a.y.min(b.y) - EPS
        && p.y <= a.y.max(b.y) + EPS
}

/// Liang-Barsky clip: does segment `a..b` intersect the closed box?
fn segment_touches_box(a: Point, b: Point, bbox: &BBox) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    let checks = [
        (-dx, a.x - (bbox.x0 - EPS)),
        (dx, (bbox.x1 + EPS) - a.x),
        (-dy, a.y - (bbox.y0 - EPS)),
        (dy, (bbox.y1 + EPS) - a.y),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

pub fn trace_connectivity(page: &Page) -> TraceOutcome {
    // element indices: wires first, then placed pins
    let wires = &page.wires;
    let pins: Vec<(NetNode, Point)> = page
        .components
        .iter()
        .flat_map(|c| {
            c.pins
                .iter()
                .filter_map(move |p| p.at.map(|at| (NetNode::new(&c.designator, &p.designator), at)))
        })
        .collect();
    let nw = wires.len();
    let mut uf = UnionFind::new(nw + pins.len());
    let labels: Vec<_> = page
        .annotations
        .iter()
        .filter(|a| a.kind == AnnotationKind::Label)
        .collect();

    let mut dangling = Vec::new();
    for (i, w) in wires.iter().enumerate() {
        for end in [w.from, w.to] {
            let mut touched = false;
            for (j, other) in wires.iter().enumerate() {
                if i != j && on_segment(end, other.from, other.to) {
                    uf.union(i, j);
                    touched = true;
                }
            }
            for (k, (_, at)) in pins.iter().enumerate() {
                if same(end, *at) {
                    uf.union(i, nw + k);
                    touched = true;
                }
            }
            if page.junctions.iter().any(|j| same(*j, end)) {
                touched = true;
            }
            if labels.iter().any(|l| l.bbox.contains(end)) {
                touched = true;
            }
            if !touched {
                dangling.push(end);
            }
        }
        // pins placed on a wire's interior
        for (k, (_, at)) in pins.iter().enumerate() {
            if on_segment(*at, w.from, w.to) {
                uf.union(i, nw + k);
            }
        }
    }
    for j in &page.junctions {
        let through: Vec<usize> = wires
            .iter()
            .enumerate()
            .filter(|(_, w)| on_segment(*j, w.from, w.to))
            .map(|(i, _)| i)
            .collect();
        for pair in through.windows(2) {
            uf.union(pair[0], pair[1]);
        }
    }
    for a in 0..pins.len() {
        for b in a + 1..pins.len() {
            if same(pins[a].1, pins[b].1) {
                uf.union(nw + a, nw + b);
            }
        }
    }

    // label attachment, then same-text labels merge clusters
    let mut label_members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for l in &labels {
        let members = label_members.entry(l.text.as_str()).or_default();
        for (i, w) in wires.iter().enumerate() {
            if segment_touches_box(w.from, w.to, &l.bbox) {
                members.push(i);
            }
        }
        for (k, (_, at)) in pins.iter().enumerate() {
            if l.bbox.contains(*at) {
                members.push(nw + k);
            }
        }
    }
    for members in label_members.values() {
        for pair in members.windows(2) {
            uf.union(pair[0], pair[1]);
        }
    }
    let mut cluster_labels: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (text, members) in &label_members {
        for m in members {
            let root = uf.find(*m);
            cluster_labels.entry(root).or_default().push(text);
        }
    }

    let mut clusters: Vec<(Option<String>, Vec<NetNode>)> = Vec::new();
    for group in uf.groups() {
        let mut nodes: Vec<NetNode> = group
            .iter()
            .filter(|i| **i >= nw)
            .map(|i| pins[*i - nw].0.clone())
            .collect();
        let root = uf.find(group[0]);
        let has_wire = group.iter().any(|i| *i < nw);
        // an isolated pin with no wire or label is unconnected, not a net
        if nodes.is_empty() || (nodes.len() == 1 && !has_wire && !cluster_labels.contains_key(&root)) {
            continue;
        }
        nodes.sort();
        nodes.dedup();
        let label = cluster_labels.get(&root).and_then(|ls| {
            ls.iter()
                .min_by(|a, b| natural_cmp(a, b))
                .map(|s| s.to_string())
        });
        clusters.push((label, nodes));
    }
    clusters.sort_by(|a, b| a.1[0].cmp(&b.1[0]));

    let mut counter = 0;
    let mut nets: Vec<Net> = clusters
        .into_iter()
        .map(|(label, nodes)| {
            let name = label.unwrap_or_else(|| {
                counter += 1;
                format!("N${counter}")
            });
            Net::new(name, nodes)
        })
        .collect();
    canonicalize_nets(&mut nets);
    TraceOutcome { nets, dangling }
}
