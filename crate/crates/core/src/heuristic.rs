//! Rule-based stand-in for the language models.
//!
//! Answers every agent kind from the request payload alone, so fixture sets
//! for the mock backend can be recorded without a model endpoint. The rules
//! are deliberately simple:
//!
//! - selection: connected components over non-power nets;
//! - head analysis: pages whose preview mentions pins, ratings, operating
//!   conditions, features or applications;
//! - extraction: `|`-delimited tables and `- ` bullet lists under known
//!   section headings;
//! - critic: counts of extracted items;
//! - group review: schematic pin names against datasheet pin functions, with
//!   swapped pairs reported under one key and pins sharing a net with an
//!   incorrect pin flagged as warnings. Run 1 adds a speculative rating
//!   warning on capacitors and run 2 misses the downstream warnings, so the
//!   consensus stage has something to do;
//! - consensus: keep single-run findings only when incorrect; contradictions
//!   resolve to the variant most runs reported, the more severe on ties;
//! - error grouping: a one-line summary from the first incorrect finding.

use std::collections::{BTreeMap, BTreeSet};

use futures::future::{BoxFuture, FutureExt};
use regex::Regex;
use serde_json::{json, Value};

use crate::datasheet::{parse_spec_xml, DatasheetSpec};
use crate::gateway::{AgentKind, BackendCall, BackendError, ChatBackend, RawCompletion};
use crate::natural::natural_cmp;
use crate::review::VerdictStatus;
use crate::schematic::{parse_xml, Page};
use crate::unionfind::UnionFind;

/// Power and ground nets do not link components into a group.
pub fn is_power_net(name: &str) -> bool {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(?:.*GND.*|VCC.*|VDD.*|[+-]?[0-9]+V.*)$").expect("valid regex"))
        .is_match(name)
}

pub struct HeuristicBackend;

impl ChatBackend for HeuristicBackend {
    fn chat<'a>(&'a self, call: &'a BackendCall) -> BoxFuture<'a, Result<RawCompletion, BackendError>> {
        let out = respond(call).map(|v| RawCompletion {
            text: serde_json::to_string_pretty(&v).expect("json value serializes"),
            usage: None,
        });
        futures::future::ready(out).boxed()
    }
}

pub fn respond(call: &BackendCall) -> Result<Value, BackendError> {
    let payload: Value = serde_json::from_str(&call.user_payload)
        .map_err(|e| BackendError::Unavailable(format!("payload is not JSON: {e}")))?;
    match call.agent_kind {
        AgentKind::Selection => selection(&payload),
        AgentKind::HeadAnalysis => Ok(head_analysis(&payload)),
        AgentKind::Extraction => Ok(extraction(&payload)),
        AgentKind::Critic => critic(&payload),
        AgentKind::GroupReview => group_review(&payload, call.seed),
        AgentKind::Consensus => Ok(consensus(&payload)),
        AgentKind::ErrorGrouping => Ok(error_grouping(&payload)),
    }
}

fn bad(msg: impl Into<String>) -> BackendError {
    BackendError::Unavailable(msg.into())
}

fn page_of(payload: &Value) -> Result<Page, BackendError> {
    let xml = payload["schematic"].as_str().ok_or_else(|| bad("payload has no schematic"))?;
    let s = parse_xml(xml).map_err(|e| bad(format!("schematic xml: {e}")))?;
    s.pages.into_iter().next().ok_or_else(|| bad("schematic has no page"))
}

fn norm(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase()
}

fn selection(payload: &Value) -> Result<Value, BackendError> {
    let page = page_of(payload)?;
    let n = page.components.len();
    let index: BTreeMap<&str, usize> = page
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| (c.designator.as_str(), i))
        .collect();
    let mut uf = UnionFind::new(n);
    for net in page.nets.iter().filter(|n| !is_power_net(&n.name)) {
        let members: Vec<usize> = net.nodes.iter().filter_map(|nd| index.get(nd.designator.as_str()).copied()).collect();
        for w in members.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let mut sets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        sets.entry(uf.find(i)).or_default().push(i);
    }
    let mut groups: Vec<Vec<&str>> = sets
        .into_values()
        .map(|m| {
            let mut d: Vec<&str> = m.iter().map(|&i| page.components[i].designator.as_str()).collect();
            d.sort_by(|a, b| natural_cmp(a, b));
            d
        })
        .collect();
    groups.sort_by(|a, b| natural_cmp(a[0], b[0]));
    let out: Vec<Value> = groups
        .iter()
        .map(|g| json!({"name": group_name(&page, g), "designators": g}))
        .collect();
    Ok(json!({ "groups": out }))
}

/// Named after the component with the most pins, with a kind word the
/// checklist chooser recognizes.
fn group_name(page: &Page, designators: &[&str]) -> String {
    let lead = designators
        .iter()
        .filter_map(|d| page.component(d))
        .max_by(|a, b| a.pins.len().cmp(&b.pins.len()).then_with(|| natural_cmp(&b.designator, &a.designator)))
        .expect("group is not empty");
    let names: BTreeSet<String> = lead.pins.iter().filter_map(|p| p.name.as_deref()).map(norm).collect();
    let has = |w: &[&str]| w.iter().any(|x| names.contains(*x));
    let kind = if lead.designator.starts_with('J') || lead.designator.starts_with('P') {
        "io connector"
    } else if has(&["SW", "FB", "VIN", "VOUT", "BOOT", "PH"]) {
        "power regulator"
    } else if has(&["RESET", "NRST", "XTAL", "SWDIO", "PA0", "GPIO0"]) {
        "mcu compute"
    } else {
        "circuit"
    };
    format!("{} {kind}", lead.designator)
}

const HEAD_WORDS: [&str; 6] = ["pin", "rating", "operating", "feature", "application", "block"];

fn head_analysis(payload: &Value) -> Value {
    let pages: Vec<i64> = payload["pages"]
        .as_array()
        .into_iter()
        .flatten()
        .filter(|p| {
            let t = p["preview"].as_str().unwrap_or_default().to_ascii_lowercase();
            !t.contains("table of contents") && HEAD_WORDS.iter().any(|w| t.contains(w))
        })
        .filter_map(|p| p["index"].as_i64())
        .collect();
    json!({ "pages": pages })
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Pins,
    AbsMax,
    RecOp,
    Blocks,
    Apps,
}

fn section_of(heading: &str) -> Option<Section> {
    let h = heading.to_ascii_lowercase();
    if h.contains("pin function") || h.contains("pin configuration") {
        Some(Section::Pins)
    } else if h.contains("absolute maximum") {
        Some(Section::AbsMax)
    } else if h.contains("recommended operating") {
        Some(Section::RecOp)
    } else if h.contains("feature") || h.contains("block diagram") {
        Some(Section::Blocks)
    } else if h.contains("application") {
        Some(Section::Apps)
    } else {
        None
    }
}

fn cells(line: &str) -> Vec<String> {
    line.trim().trim_matches('|').split('|').map(|c| c.trim().to_string()).collect()
}

fn num(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn extraction(payload: &Value) -> Value {
    let mut pins = Vec::new();
    let mut abs = Vec::new();
    let mut rec = Vec::new();
    let mut blocks = Vec::new();
    let mut apps = Vec::new();
    let mut seen_pins = BTreeSet::new();
    for page in payload["pages"].as_array().into_iter().flatten() {
        let mut section = Section::None;
        for line in page["text"].as_str().unwrap_or_default().lines() {
            let t = line.trim();
            if let Some(h) = t.strip_prefix('#') {
                section = section_of(h).unwrap_or(Section::None);
                continue;
            }
            if let Some(item) = t.strip_prefix("- ") {
                match section {
                    Section::Blocks => blocks.push(item.to_string()),
                    Section::Apps => apps.push(item.to_string()),
                    _ => {}
                }
                continue;
            }
            if !t.starts_with('|') {
                continue;
            }
            let c = cells(t);
            match (section, c.as_slice()) {
                (Section::Pins, [pin, name, desc]) if pin.chars().all(|ch| ch.is_ascii_alphanumeric()) && pin != "Pin" => {
                    if seen_pins.insert(pin.clone()) {
                        pins.push(json!({"designator": pin, "function": name, "metadata": desc}));
                    }
                }
                (Section::AbsMax, [param, limit, unit]) => {
                    if let Some(l) = num(limit) {
                        abs.push(json!({"parameter": param, "limit": l, "unit": unit}));
                    }
                }
                (Section::RecOp, [param, min, typ, max, unit]) => {
                    let (min, typ, max) = (num(min), num(typ), num(max));
                    if min.is_some() || typ.is_some() || max.is_some() {
                        rec.push(json!({"parameter": param, "min": min, "typ": typ, "max": max, "unit": unit}));
                    }
                }
                _ => {}
            }
        }
    }
    json!({
        "pins": pins,
        "abs_max_ratings": abs,
        "rec_operating": rec,
        "blocks": blocks,
        "app_circuits": apps,
    })
}

fn critic(payload: &Value) -> Result<Value, BackendError> {
    let xml = payload["spec_xml"].as_str().ok_or_else(|| bad("payload has no spec_xml"))?;
    let s = parse_spec_xml(xml).map_err(|e| bad(format!("spec xml: {e}")))?;
    let cap = |v: usize| v.min(10);
    let described = s.pins.iter().filter(|p| p.metadata.as_deref().is_some_and(|m| !m.is_empty())).count();
    let pfc = if s.pins.is_empty() { 0 } else { (10 * described).div_ceil(s.pins.len()) };
    Ok(json!({
        "feature_completeness": cap(2 * s.blocks.len() + s.abs_max_ratings.len() + s.rec_operating.len()),
        "pin_function_coverage": cap(pfc),
        "application_information": cap(3 * s.rec_operating.len() + s.abs_max_ratings.len()),
        "typical_application_circuits": cap(5 * s.app_circuits.len()),
        "comments": format!("{} pins, {} blocks, {} application circuits", s.pins.len(), s.blocks.len(), s.app_circuits.len()),
    }))
}

struct Verdict {
    pin_key: String,
    status: VerdictStatus,
    reasoning: String,
    nets: Vec<String>,
}

impl Verdict {
    fn json(&self) -> Value {
        json!({
            "pin_key": self.pin_key,
            "status": self.status,
            "reasoning": self.reasoning,
            "referenced_nets": self.nets,
        })
    }
}

fn group_review(payload: &Value, seed: u64) -> Result<Value, BackendError> {
    let page = page_of(payload)?;
    let mut specs: BTreeMap<String, DatasheetSpec> = BTreeMap::new();
    for d in payload["datasheets"].as_array().into_iter().flatten() {
        let (Some(des), Some(xml)) = (d["designator"].as_str(), d["spec_xml"].as_str()) else {
            continue;
        };
        let spec = parse_spec_xml(xml).map_err(|e| bad(format!("spec xml: {e}")))?;
        specs.insert(des.to_string(), spec);
    }
    let designators: Vec<String> = payload["group"]["designators"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|v| v.as_str().map(str::to_string))
        .collect();

    let mut verdicts: BTreeMap<String, Vec<Verdict>> = BTreeMap::new();
    // nets on incorrect pins -> (designator, pin key)
    let mut suspect_nets: BTreeMap<String, (String, String)> = BTreeMap::new();
    for d in &designators {
        let (Some(c), Some(spec)) = (page.component(d), specs.get(d)) else {
            continue;
        };
        let mut done = BTreeSet::new();
        let mut out = Vec::new();
        for p in &c.pins {
            if done.contains(&p.designator) {
                continue;
            }
            let nets = page.nets_of_pin(d, &p.designator);
            let Some(sp) = spec.pin(&p.designator) else {
                out.push(Verdict {
                    pin_key: p.designator.clone(),
                    status: VerdictStatus::Unverifiable,
                    reasoning: format!("pin {} does not appear in the {} pin table", p.designator, spec.part),
                    nets,
                });
                continue;
            };
            let have = p.name.as_deref().unwrap_or_default();
            if norm(have) == norm(&sp.function) {
                out.push(Verdict {
                    pin_key: p.designator.clone(),
                    status: VerdictStatus::Correct,
                    reasoning: format!("{} matches datasheet function {}", have, sp.function),
                    nets,
                });
                continue;
            }
            let partner = c.pins.iter().find(|q| {
                q.designator != p.designator
                    && !done.contains(&q.designator)
                    && norm(q.name.as_deref().unwrap_or_default()) == norm(&sp.function)
                    && spec.pin(&q.designator).is_some_and(|sq| norm(&sq.function) == norm(have))
            });
            let (key, reasoning, mut nets) = match partner {
                Some(q) => {
                    done.insert(q.designator.clone());
                    let mut all = nets;
                    all.extend(page.nets_of_pin(d, &q.designator));
                    let mut keys = [p.designator.clone(), q.designator.clone()];
                    keys.sort_by(|a, b| natural_cmp(a, b));
                    (
                        keys.join(", "),
                        format!(
                            "pins {} and {} are swapped: the symbol places {} on pin {} and {} on pin {}, the {} datasheet defines pin {} as {} and pin {} as {}",
                            keys[0], keys[1], have, p.designator,
                            q.name.as_deref().unwrap_or_default(), q.designator,
                            spec.part, p.designator, sp.function, q.designator, have
                        ),
                        all,
                    )
                }
                None => (
                    p.designator.clone(),
                    format!(
                        "the symbol names pin {} {}, the {} datasheet defines it as {}",
                        p.designator,
                        if have.is_empty() { "(unnamed)" } else { have },
                        spec.part,
                        sp.function
                    ),
                    nets,
                ),
            };
            nets.sort();
            nets.dedup();
            for n in nets.iter().filter(|n| !is_power_net(n)) {
                suspect_nets.entry(n.clone()).or_insert_with(|| (d.clone(), key.clone()));
            }
            out.push(Verdict {
                pin_key: key,
                status: VerdictStatus::Incorrect,
                reasoning,
                nets,
            });
        }
        verdicts.insert(d.clone(), out);
    }

    for d in &designators {
        if specs.contains_key(d) {
            continue;
        }
        let Some(c) = page.component(d) else { continue };
        let mut out = Vec::new();
        for p in &c.pins {
            let nets = page.nets_of_pin(d, &p.designator);
            let hit = nets.iter().find_map(|n| suspect_nets.get(n).map(|s| (n, s)));
            match hit {
                Some((net, (other, key))) if seed != 2 => out.push(Verdict {
                    pin_key: p.designator.clone(),
                    status: VerdictStatus::Warning,
                    reasoning: format!(
                        "connects to {net}, which lands on {other} pin {key} flagged above; this part's connection follows the wrong pin function"
                    ),
                    nets: vec![net.clone()],
                }),
                _ if seed == 1 && d.starts_with('C') && nets.iter().any(|n| is_power_net(n) && !n.to_ascii_uppercase().contains("GND")) => {
                    out.push(Verdict {
                        pin_key: p.designator.clone(),
                        status: VerdictStatus::Warning,
                        reasoning: "capacitor voltage rating is not stated; confirm it exceeds the rail voltage".into(),
                        nets: nets.clone(),
                    })
                }
                _ => out.push(Verdict {
                    pin_key: p.designator.clone(),
                    status: VerdictStatus::Unverifiable,
                    reasoning: "no datasheet available for this part".into(),
                    nets,
                }),
            }
        }
        verdicts.insert(d.clone(), out);
    }

    let mut analyses: Vec<(&String, Vec<Verdict>)> = verdicts.iter_mut().map(|(d, v)| (d, std::mem::take(v))).collect();
    analyses.sort_by(|a, b| natural_cmp(a.0, b.0));
    let analyses: Vec<Value> = analyses
        .into_iter()
        .map(|(d, v)| json!({"designator": d, "verdicts": v.iter().map(Verdict::json).collect::<Vec<_>>()}))
        .collect();
    Ok(json!({ "analyses": analyses }))
}

fn severity(s: &str) -> u8 {
    match s {
        "incorrect" => 3,
        "warning" => 2,
        "unverifiable" => 1,
        _ => 0,
    }
}

fn consensus(payload: &Value) -> Value {
    let mut decisions = Vec::new();
    let mut resolutions = Vec::new();
    for case in payload["cases"].as_array().into_iter().flatten() {
        let id = case["case_id"].as_u64().unwrap_or_default();
        let verdicts = case["verdicts"].as_array().cloned().unwrap_or_default();
        match case["kind"].as_str() {
            Some("single_run") => {
                let v = verdicts.first().cloned().unwrap_or(Value::Null);
                let keep = v["status"].as_str() == Some("incorrect");
                decisions.push(json!({
                    "case_id": id,
                    "keep": keep,
                    "reasoning": if keep {
                        "the pin mismatch is verifiable against the datasheet"
                    } else {
                        "reported by one run only and not backed by the datasheet"
                    },
                }));
            }
            _ => {
                // majority by runs; ties go to the more severe reading
                let runs_for = |v: &Value| {
                    verdicts
                        .iter()
                        .filter(|o| o["pin_key"] == v["pin_key"] && o["status"] == v["status"])
                        .filter_map(|o| o["run_index"].as_u64())
                        .collect::<BTreeSet<_>>()
                        .len()
                };
                let rank = |v: &Value| (runs_for(v), severity(v["status"].as_str().unwrap_or_default()));
                let mut best: Option<&Value> = None;
                for v in &verdicts {
                    if best.is_none_or(|b| rank(v) > rank(b)) {
                        best = Some(v);
                    }
                }
                if let Some(b) = best {
                    let total = verdicts
                        .iter()
                        .filter_map(|o| o["run_index"].as_u64())
                        .collect::<BTreeSet<_>>()
                        .len();
                    resolutions.push(json!({
                        "case_id": id,
                        "pin_key": b["pin_key"],
                        "status": b["status"],
                        "reasoning": format!(
                            "{} of {total} runs agree: {}",
                            runs_for(b),
                            b["reasoning"].as_str().unwrap_or_default()
                        ),
                        "referenced_nets": b["referenced_nets"],
                    }));
                }
            }
        }
    }
    json!({ "decisions": decisions, "resolutions": resolutions })
}

fn error_grouping(payload: &Value) -> Value {
    let summaries: Vec<Value> = payload["groups"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|g| {
            let findings = g["findings"].as_array().cloned().unwrap_or_default();
            let lead = findings
                .iter()
                .find(|f| f["status"] == "incorrect")
                .or_else(|| findings.first());
            let summary = match lead {
                Some(f) => format!(
                    "{} pin {}: {}",
                    f["designator"].as_str().unwrap_or_default(),
                    f["pin_key"].as_str().unwrap_or_default(),
                    f["reasoning"].as_str().unwrap_or_default()
                ),
                None => String::new(),
            };
            json!({"group_id": g["group_id"], "summary": summary})
        })
        .collect();
    json!({ "summaries": summaries })
}
