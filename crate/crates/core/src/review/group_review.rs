//! One group review run, and the k-way concurrent fan-out.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    pin_key_cmp, sort_nets, sorted_pins, ComponentAnalysis, FunctionalGroup, PinVerdict, ReviewError,
    RunResult, VerdictStatus, parse_pin_key,
};
use crate::datasheet::DatasheetSpec;
use crate::gateway::{system_prompt, AgentKind, AgentRequest, GatewayError, LlmGateway};
use crate::natural::natural_cmp;
use crate::schematic::{serialize_page_xml, Page};

/// Reasoning attached to pins of components that have no specification.
pub const NO_DATASHEET: &str = "no datasheet";

/// Everything a review of one group sees.
pub struct GroupContext<'a> {
    pub page: &'a Page,
    pub group: &'a FunctionalGroup,
    /// Specifications by designator; members without an entry have no datasheet.
    pub specs: BTreeMap<String, Arc<DatasheetSpec>>,
    pub checklist: String,
    pub netlist_xml: String,
}

impl<'a> GroupContext<'a> {
    pub fn new(
        page: &'a Page,
        group: &'a FunctionalGroup,
        specs: BTreeMap<String, Arc<DatasheetSpec>>,
        checklist: String,
    ) -> Self {
        Self {
            page,
            group,
            specs,
            checklist,
            netlist_xml: serialize_page_xml(page),
        }
    }

    /// Agent payload shared by review and consensus calls.
    pub(crate) fn context_json(&self) -> serde_json::Value {
        let datasheets: Vec<_> = self
            .group
            .designators
            .iter()
            .filter_map(|d| {
                let s = self.specs.get(d)?;
                Some(json!({"designator": d, "part": s.part.key(), "spec_xml": s.to_xml()}))
            })
            .collect();
        let missing: Vec<&String> = self
            .group
            .designators
            .iter()
            .filter(|d| !self.specs.contains_key(*d))
            .collect();
        json!({
            "page_id": self.page.id,
            "group": {"name": self.group.name, "designators": self.group.designators},
            "schematic": self.netlist_xml,
            "datasheets": datasheets,
            "missing_datasheets": missing,
        })
    }

    fn review_payload(&self) -> String {
        let mut v = self.context_json();
        v["checklist"] = json!(self.checklist);
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FanOut {
    pub results: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
}

#[derive(Deserialize)]
struct ReviewOutput {
    analyses: Vec<ComponentAnalysis>,
}

/// One review run; `run_index` is the seed that distinguishes runs.
pub async fn review_group_once(
    ctx: &GroupContext<'_>,
    run_index: usize,
    gateway: &LlmGateway,
    span: Option<&str>,
) -> Result<RunResult, GatewayError> {
    let mut req = AgentRequest::new(
        AgentKind::GroupReview,
        system_prompt(AgentKind::GroupReview),
        ctx.review_payload(),
    )
    .with_seed(run_index as u64);
    if let Some(s) = span {
        req = req.with_span(format!("{s}/review:{run_index}"));
    }
    let (out, _) = gateway.complete_typed::<ReviewOutput>(&req).await?;
    let (run, warnings) = validate_run(ctx, run_index, out.analyses);
    for w in warnings {
        tracing::warn!(group = %ctx.group.name, run = run_index, "{w}");
    }
    Ok(run)
}

/// Keeps what refers to the group: unknown designators, pins and nets are
/// dropped (a verdict survives while at least one of its pins does) and pins
/// already covered by an earlier verdict are removed. For members without a
/// specification, `Correct` verdicts become `Unverifiable` and pins the
/// agent did not address default to `Unverifiable`.
pub(crate) fn validate_run(
    ctx: &GroupContext<'_>,
    run_index: usize,
    analyses: Vec<ComponentAnalysis>,
) -> (RunResult, Vec<String>) {
    let mut warnings = Vec::new();
    let members: HashSet<&str> = ctx.group.designators.iter().map(String::as_str).collect();
    let nets: HashSet<&str> = ctx.page.nets.iter().map(|n| n.name.as_str()).collect();
    let mut by_designator: HashMap<String, (Vec<PinVerdict>, HashSet<String>)> = HashMap::new();

    for a in analyses {
        if !members.contains(a.designator.as_str()) {
            warnings.push(format!("{} is not in the group; analysis dropped", a.designator));
            continue;
        }
        let comp = ctx.page.component(&a.designator);
        let (kept, seen) = by_designator.entry(a.designator.clone()).or_default();
        for mut v in a.verdicts {
            let pins: Vec<String> = parse_pin_key(&v.pin_key)
                .into_iter()
                .filter(|p| {
                    let known = comp.is_none_or(|c| c.pins.is_empty() || c.pin(p).is_some());
                    if !known {
                        warnings.push(format!("{}: pin {p} does not exist; dropped", a.designator));
                    }
                    known && !seen.contains(p)
                })
                .collect();
            let pins = sorted_pins(pins);
            if pins.is_empty() {
                warnings.push(format!("{}: verdict `{}` has no valid pins; dropped", a.designator, v.pin_key));
                continue;
            }
            seen.extend(pins.iter().cloned());
            v.pin_key = pins.join(", ");
            v.referenced_nets.retain(|n| {
                let ok = nets.contains(n.as_str());
                if !ok {
                    warnings.push(format!("{}: unknown net {n} dropped", a.designator));
                }
                ok
            });
            sort_nets(&mut v.referenced_nets);
            kept.push(v);
        }
    }

    for d in &ctx.group.designators {
        if ctx.specs.contains_key(d) {
            continue;
        }
        let Some(c) = ctx.page.component(d) else { continue };
        let (kept, seen) = by_designator.entry(d.clone()).or_default();
        // a pin cannot be confirmed correct without its datasheet
        for v in kept.iter_mut().filter(|v| v.status == VerdictStatus::Correct) {
            v.status = VerdictStatus::Unverifiable;
            v.reasoning = format!("{NO_DATASHEET}; {}", v.reasoning);
        }
        for p in c.pins.iter().filter(|p| !seen.contains(&p.designator)) {
            let mut nets = ctx.page.nets_of_pin(d, &p.designator);
            sort_nets(&mut nets);
            kept.push(PinVerdict {
                pin_key: p.designator.clone(),
                status: VerdictStatus::Unverifiable,
                reasoning: NO_DATASHEET.to_string(),
                referenced_nets: nets,
            });
        }
    }

    let mut analyses: Vec<ComponentAnalysis> = by_designator
        .into_iter()
        .filter(|(_, (v, _))| !v.is_empty())
        .map(|(designator, (mut verdicts, _))| {
            verdicts.sort_by(|a, b| pin_key_cmp(&a.pin_key, &b.pin_key));
            ComponentAnalysis { designator, verdicts }
        })
        .collect();
    analyses.sort_by(|a, b| natural_cmp(&a.designator, &b.designator));
    (RunResult { run_index, analyses }, warnings)
}

/// Runs `k` reviews concurrently (seeds 0..k). Individual failures are
/// tolerated as long as one run succeeds.
pub async fn fan_out_reviews(
    ctx: &GroupContext<'_>,
    k: usize,
    gateway: &LlmGateway,
    span: Option<&str>,
) -> Result<FanOut, ReviewError> {
    let runs = futures::future::join_all((0..k.max(1)).map(|i| review_group_once(ctx, i, gateway, span))).await;
    let mut out = FanOut::default();
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(run) => out.results.push(run),
            Err(e) => out.failures.push(RunFailure {
                run_index: i,
                error: e.to_string(),
            }),
        }
    }
    if out.results.is_empty() {
        return Err(ReviewError::AllRunsFailed {
            group: ctx.group.name.clone(),
            failures: out.failures.into_iter().map(|f| format!("run {}: {}", f.run_index, f.error)).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasheet::PartRef;
    use crate::schematic::{Component, Net, NetNode, Pin};

    fn pin(d: &str) -> Pin {
        Pin {
            designator: d.into(),
            name: None,
            at: None,
        }
    }

    fn fixture() -> (Page, FunctionalGroup) {
        let page = Page {
            id: "P1".into(),
            components: vec![
                Component {
                    designator: "U1".into(),
                    mpn: Some("TPS54331".into()),
                    pins: vec![pin("1"), pin("2"), pin("3")],
                    ..Default::default()
                },
                Component {
                    designator: "R1".into(),
                    mpn: Some("RC0603".into()),
                    pins: vec![pin("1"), pin("2")],
                    ..Default::default()
                },
            ],
            nets: vec![
                Net::new("A", vec![NetNode::new("U1", "1"), NetNode::new("R1", "1")]),
                Net::new("B", vec![NetNode::new("U1", "3")]),
            ],
            ..Default::default()
        };
        let group = FunctionalGroup {
            name: "power stage".into(),
            designators: vec!["R1".into(), "U1".into()],
            parts: vec![PartRef::mpn("TPS54331"), PartRef::mpn("RC0603")],
            datasheet_urls: Default::default(),
        };
        (page, group)
    }

    fn spec() -> Arc<DatasheetSpec> {
        Arc::new(DatasheetSpec {
            part: PartRef::mpn("TPS54331"),
            source_url: "file:x".into(),
            pins: vec![],
            abs_max_ratings: vec![],
            rec_operating: vec![],
            blocks: vec![],
            app_circuits: vec![],
        })
    }

    fn verdict(key: &str, status: VerdictStatus, nets: &[&str]) -> PinVerdict {
        PinVerdict {
            pin_key: key.into(),
            status,
            reasoning: "r".into(),
            referenced_nets: nets.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn validation_rules() {
        let (page, group) = fixture();
        let mut specs = BTreeMap::new();
        specs.insert("U1".to_string(), spec());
        let ctx = GroupContext::new(&page, &group, specs, String::new());
        let raw = vec![
            ComponentAnalysis {
                designator: "U1".into(),
                verdicts: vec![
                    verdict("3, 1", VerdictStatus::Incorrect, &["B", "A", "GHOST"]),
                    verdict("99", VerdictStatus::Correct, &[]),
                    verdict("2, 99", VerdictStatus::Correct, &[]),
                ],
            },
            ComponentAnalysis {
                designator: "U9".into(),
                verdicts: vec![verdict("1", VerdictStatus::Correct, &[])],
            },
        ];
        let (run, warnings) = validate_run(&ctx, 2, raw);
        assert_eq!(run.run_index, 2);
        assert_eq!(run.analyses.len(), 2);
        // R1 has no spec: every pin unverifiable
        assert_eq!(run.analyses[0].designator, "R1");
        assert!(run.analyses[0]
            .verdicts
            .iter()
            .all(|v| v.status == VerdictStatus::Unverifiable && v.reasoning == NO_DATASHEET));
        assert_eq!(run.analyses[0].verdicts[0].referenced_nets, vec!["A"]);
        let u1 = &run.analyses[1];
        assert_eq!(u1.verdicts.len(), 2);
        assert_eq!(u1.verdicts[0].pin_key, "1, 3");
        assert_eq!(u1.verdicts[0].referenced_nets, vec!["A", "B"]);
        assert_eq!(u1.verdicts[1].pin_key, "2");
        assert!(warnings.iter().any(|w| w.contains("U9")));
        assert!(warnings.iter().any(|w| w.contains("pin 99")));
        assert!(warnings.iter().any(|w| w.contains("GHOST")));
    }

    #[test]
    fn missing_spec_keeps_problems_and_defaults_the_rest() {
        let (page, group) = fixture();
        let ctx = GroupContext::new(&page, &group, BTreeMap::new(), String::new());
        let raw = vec![ComponentAnalysis {
            designator: "R1".into(),
            verdicts: vec![
                verdict("1", VerdictStatus::Warning, &["A"]),
                verdict("2", VerdictStatus::Correct, &[]),
            ],
        }];
        let (run, _) = validate_run(&ctx, 0, raw);
        let r1 = &run.analyses[0];
        assert_eq!(r1.designator, "R1");
        assert_eq!(r1.verdicts[0].status, VerdictStatus::Warning);
        assert_eq!(r1.verdicts[1].status, VerdictStatus::Unverifiable);
        assert!(r1.verdicts[1].reasoning.starts_with(NO_DATASHEET));
        let u1 = &run.analyses[1];
        assert_eq!(u1.verdicts.len(), 3);
        assert!(u1.verdicts.iter().all(|v| v.reasoning == NO_DATASHEET));
    }
}
