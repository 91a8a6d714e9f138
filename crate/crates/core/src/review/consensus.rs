//! Reconciling k review runs into one finding set.
//!
//! Observations are matched on (designator, normalized pin key, status);
//! reasoning text is ignored. Per designator, observations whose pin sets
//! overlap form a cluster:
//!
//! - one variant seen in two or more runs: kept as a multi-run finding,
//!   `High` confidence when more than half of the k runs agree, else `Medium`;
//! - one variant seen in a single run: the consensus agent decides keep/drop;
//!   kept findings get `Low` confidence;
//! - several variants: the consensus agent resolves the contradiction to one
//!   finding. Without a usable resolution the most supported variant wins
//!   (earliest on ties).
//!
//! Clusters partition each component's pins, so the output never holds two
//! findings for one pin.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::group_review::GroupContext;
use super::{
    parse_pin_key, pin_key_cmp, sort_nets, sorted_pins, Confidence, ConsensusAnalysis, ConsensusFinding,
    PinVerdict, Provenance, ReviewError, RunResult, VerdictStatus,
};
use crate::gateway::{system_prompt, AgentKind, AgentRequest, LlmGateway};
use crate::natural::natural_cmp;
use crate::unionfind::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusCaseKind {
    SingleRun,
    Contradiction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub run_index: usize,
    #[serde(flatten)]
    pub verdict: PinVerdict,
}

/// A question for the consensus agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusCase {
    pub case_id: usize,
    pub kind: ConsensusCaseKind,
    pub designator: String,
    pub verdicts: Vec<CaseVerdict>,
}

/// The consensus agent's answer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusOutput {
    #[serde(default)]
    pub decisions: Vec<Decision>,
    #[serde(default)]
    pub resolutions: Vec<Resolution>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub case_id: usize,
    pub keep: bool,
    #[serde(default)]
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub case_id: usize,
    pub pin_key: String,
    pub status: VerdictStatus,
    pub reasoning: String,
    #[serde(default)]
    pub referenced_nets: Vec<String>,
}

struct Obs {
    run: usize,
    pins: Vec<String>,
    key: String,
    verdict: PinVerdict,
}

/// Findings settled without the agent plus the cases that need it.
pub(crate) struct Plan {
    settled: Vec<(String, ConsensusFinding)>,
    cases: Vec<ConsensusCase>,
}

pub(crate) fn plan(results: &[RunResult], k: usize) -> Plan {
    let mut per_designator: BTreeMap<String, Vec<Obs>> = BTreeMap::new();
    let mut ordered: Vec<&RunResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.run_index);
    for r in ordered {
        for a in &r.analyses {
            for v in &a.verdicts {
                let pins = sorted_pins(parse_pin_key(&v.pin_key));
                if pins.is_empty() {
                    continue;
                }
                per_designator.entry(a.designator.clone()).or_default().push(Obs {
                    run: r.run_index,
                    key: pins.join(", "),
                    pins,
                    verdict: v.clone(),
                });
            }
        }
    }

    let mut designators: Vec<String> = per_designator.keys().cloned().collect();
    designators.sort_by(|a, b| natural_cmp(a, b));
    let mut out = Plan {
        settled: vec![],
        cases: vec![],
    };
    for d in designators {
        let obs = &per_designator[&d];
        let mut uf = UnionFind::new(obs.len());
        let mut by_pin: HashMap<&str, usize> = HashMap::new();
        for (i, o) in obs.iter().enumerate() {
            for p in &o.pins {
                match by_pin.get(p.as_str()) {
                    Some(&j) => {
                        uf.union(i, j);
                    }
                    None => {
                        by_pin.insert(p, i);
                    }
                }
            }
        }
        for cluster in uf.groups() {
            // variants in order of first appearance
            let mut variants: Vec<((&str, VerdictStatus), Vec<usize>)> = Vec::new();
            for &i in &cluster {
                let id = (obs[i].key.as_str(), obs[i].verdict.status);
                match variants.iter_mut().find(|(v, _)| *v == id) {
                    Some((_, members)) => members.push(i),
                    None => variants.push((id, vec![i])),
                }
            }
            let support = |members: &[usize]| {
                let mut runs: Vec<usize> = members.iter().map(|&i| obs[i].run).collect();
                runs.sort_unstable();
                runs.dedup();
                runs.len()
            };
            if variants.len() == 1 {
                let members = &variants[0].1;
                let n = support(members);
                if n >= 2 {
                    out.settled.push((d.clone(), merged(obs, members, n, k)));
                    continue;
                }
            }
            let kind = if variants.len() == 1 {
                ConsensusCaseKind::SingleRun
            } else {
                ConsensusCaseKind::Contradiction
            };
            let verdicts = cluster
                .iter()
                .map(|&i| CaseVerdict {
                    run_index: obs[i].run,
                    verdict: PinVerdict {
                        pin_key: obs[i].key.clone(),
                        ..obs[i].verdict.clone()
                    },
                })
                .collect();
            out.cases.push(ConsensusCase {
                case_id: out.cases.len(),
                kind,
                designator: d.clone(),
                verdicts,
            });
        }
    }
    out
}

fn merged(obs: &[Obs], members: &[usize], support: usize, k: usize) -> ConsensusFinding {
    let first = &obs[members[0]];
    let mut nets: Vec<String> = members
        .iter()
        .flat_map(|&i| obs[i].verdict.referenced_nets.iter().cloned())
        .collect();
    sort_nets(&mut nets);
    ConsensusFinding {
        pin_key: first.key.clone(),
        status: first.verdict.status,
        reasoning: first.verdict.reasoning.clone(),
        referenced_nets: nets,
        support_count: support,
        confidence: if 2 * support > k {
            Confidence::High
        } else {
            Confidence::Medium
        },
        provenance: Provenance::MultiRun,
    }
}

/// Most supported variant of a contradiction; earliest on ties.
fn majority(case: &ConsensusCase) -> &PinVerdict {
    let mut best: Option<(&PinVerdict, usize)> = None;
    for cv in &case.verdicts {
        let v = &cv.verdict;
        let mut runs: Vec<usize> = case
            .verdicts
            .iter()
            .filter(|o| o.verdict.pin_key == v.pin_key && o.verdict.status == v.status)
            .map(|o| o.run_index)
            .collect();
        runs.sort_unstable();
        runs.dedup();
        if best.is_none_or(|(_, n)| runs.len() > n) {
            best = Some((v, runs.len()));
        }
    }
    best.expect("a case has at least one verdict").0
}

pub(crate) fn apply(plan: Plan, answer: &ConsensusOutput) -> Vec<ConsensusAnalysis> {
    let mut findings = plan.settled;
    let decisions: HashMap<usize, &Decision> = answer.decisions.iter().map(|d| (d.case_id, d)).collect();
    let resolutions: HashMap<usize, &Resolution> = answer.resolutions.iter().map(|r| (r.case_id, r)).collect();
    for case in &plan.cases {
        match case.kind {
            ConsensusCaseKind::SingleRun => {
                if decisions.get(&case.case_id).is_some_and(|d| d.keep) {
                    let v = &case.verdicts[0].verdict;
                    let mut nets = v.referenced_nets.clone();
                    sort_nets(&mut nets);
                    findings.push((
                        case.designator.clone(),
                        ConsensusFinding {
                            pin_key: v.pin_key.clone(),
                            status: v.status,
                            reasoning: v.reasoning.clone(),
                            referenced_nets: nets,
                            support_count: 1,
                            confidence: Confidence::Low,
                            provenance: Provenance::SingleRunVerified,
                        },
                    ));
                }
            }
            ConsensusCaseKind::Contradiction => {
                let pool: Vec<String> =
                    sorted_pins(case.verdicts.iter().flat_map(|v| parse_pin_key(&v.verdict.pin_key)));
                let resolved = resolutions.get(&case.case_id).and_then(|r| {
                    let pins = sorted_pins(parse_pin_key(&r.pin_key).into_iter().filter(|p| pool.contains(p)));
                    (!pins.is_empty()).then(|| {
                        let mut nets = r.referenced_nets.clone();
                        if nets.is_empty() {
                            nets = case
                                .verdicts
                                .iter()
                                .filter(|v| v.verdict.status == r.status)
                                .flat_map(|v| v.verdict.referenced_nets.iter().cloned())
                                .collect();
                        }
                        (pins.join(", "), r.status, r.reasoning.clone(), nets)
                    })
                });
                let (pin_key, status, reasoning, mut nets) = resolved.unwrap_or_else(|| {
                    let v = majority(case);
                    (v.pin_key.clone(), v.status, v.reasoning.clone(), v.referenced_nets.clone())
                });
                sort_nets(&mut nets);
                let mut runs: Vec<usize> = case
                    .verdicts
                    .iter()
                    .filter(|v| v.verdict.pin_key == pin_key && v.verdict.status == status)
                    .map(|v| v.run_index)
                    .collect();
                runs.sort_unstable();
                runs.dedup();
                findings.push((
                    case.designator.clone(),
                    ConsensusFinding {
                        pin_key,
                        status,
                        reasoning,
                        referenced_nets: nets,
                        support_count: runs.len(),
                        confidence: Confidence::Medium,
                        provenance: Provenance::ContradictionResolved,
                    },
                ));
            }
        }
    }

    let mut by_designator: BTreeMap<String, Vec<ConsensusFinding>> = BTreeMap::new();
    for (d, f) in findings {
        by_designator.entry(d).or_default().push(f);
    }
    let mut out: Vec<ConsensusAnalysis> = by_designator
        .into_iter()
        .map(|(designator, mut findings)| {
            findings.sort_by(|a, b| pin_key_cmp(&a.pin_key, &b.pin_key));
            ConsensusAnalysis { designator, findings }
        })
        .collect();
    out.sort_by(|a, b| natural_cmp(&a.designator, &b.designator));
    out
}

/// Reconciles the successful runs of a fan-out. `k` is the number of runs
/// requested; the consensus agent is called once per group, and only when
/// single-run findings or contradictions exist.
pub async fn combine_consensus(
    ctx: &GroupContext<'_>,
    results: &[RunResult],
    k: usize,
    gateway: &LlmGateway,
    span: Option<&str>,
) -> Result<Vec<ConsensusAnalysis>, ReviewError> {
    let plan = plan(results, k);
    let answer = if plan.cases.is_empty() {
        ConsensusOutput::default()
    } else {
        let mut payload = ctx.context_json();
        payload["runs"] = json!(k);
        payload["cases"] = json!(plan.cases);
        let mut req = AgentRequest::new(
            AgentKind::Consensus,
            system_prompt(AgentKind::Consensus),
            payload.to_string(),
        );
        if let Some(s) = span {
            req = req.with_span(format!("{s}/consensus"));
        }
        gateway.complete_typed::<ConsensusOutput>(&req).await?.0
    };
    Ok(apply(plan, &answer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(i: usize, items: &[(&str, &str, VerdictStatus)]) -> RunResult {
        let mut analyses: Vec<super::super::ComponentAnalysis> = Vec::new();
        for (d, key, st) in items {
            let v = PinVerdict {
                pin_key: key.to_string(),
                status: *st,
                reasoning: format!("run {i}"),
                referenced_nets: vec![],
            };
            match analyses.iter_mut().find(|a| a.designator == *d) {
                Some(a) => a.verdicts.push(v),
                None => analyses.push(super::super::ComponentAnalysis {
                    designator: d.to_string(),
                    verdicts: vec![v],
                }),
            }
        }
        RunResult { run_index: i, analyses }
    }

    use VerdictStatus::*;

    #[test]
    fn two_of_three_is_multi_run() {
        let runs = vec![
            run(0, &[("U1", "1, 3", Incorrect)]),
            run(1, &[("U1", "3,1", Incorrect)]),
            run(2, &[]),
        ];
        let p = plan(&runs, 3);
        assert!(p.cases.is_empty());
        let out = apply(p, &ConsensusOutput::default());
        let f = &out[0].findings[0];
        assert_eq!((f.pin_key.as_str(), f.support_count), ("1, 3", 2));
        assert_eq!(f.provenance, Provenance::MultiRun);
        assert_eq!(f.confidence, Confidence::High);
        assert_eq!(f.reasoning, "run 0");
    }

    #[test]
    fn single_run_dropped_or_kept() {
        let runs = vec![run(0, &[("R5", "2", Warning)]), run(1, &[]), run(2, &[])];
        let p = plan(&runs, 3);
        assert_eq!(p.cases.len(), 1);
        assert_eq!(p.cases[0].kind, ConsensusCaseKind::SingleRun);
        let drop = ConsensusOutput {
            decisions: vec![Decision {
                case_id: 0,
                keep: false,
                reasoning: String::new(),
            }],
            resolutions: vec![],
        };
        assert!(apply(plan(&runs, 3), &drop).is_empty());
        let keep = ConsensusOutput {
            decisions: vec![Decision {
                case_id: 0,
                keep: true,
                reasoning: String::new(),
            }],
            resolutions: vec![],
        };
        let out = apply(p, &keep);
        assert_eq!(out[0].findings[0].provenance, Provenance::SingleRunVerified);
        assert_eq!(out[0].findings[0].confidence, Confidence::Low);
        // no answer at all drops the finding
        assert!(apply(plan(&runs, 3), &ConsensusOutput::default()).is_empty());
    }

    #[test]
    fn contradiction_resolved_once() {
        let runs = vec![
            run(0, &[("U1", "4", Correct)]),
            run(1, &[("U1", "4", Incorrect)]),
            run(2, &[("U1", "4", Incorrect)]),
        ];
        let p = plan(&runs, 3);
        assert_eq!(p.cases.len(), 1);
        assert_eq!(p.cases[0].kind, ConsensusCaseKind::Contradiction);
        let answer = ConsensusOutput {
            decisions: vec![],
            resolutions: vec![Resolution {
                case_id: 0,
                pin_key: "4".into(),
                status: Incorrect,
                reasoning: "pin 4 must not be grounded".into(),
                referenced_nets: vec![],
            }],
        };
        let out = apply(p, &answer);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].findings.len(), 1);
        let f = &out[0].findings[0];
        assert_eq!(f.status, Incorrect);
        assert_eq!(f.provenance, Provenance::ContradictionResolved);
        assert_eq!(f.support_count, 2);
    }

    #[test]
    fn unusable_resolution_falls_back_to_majority() {
        let runs = vec![
            run(0, &[("U1", "4", Correct)]),
            run(1, &[("U1", "4", Incorrect)]),
            run(2, &[("U1", "4", Incorrect)]),
        ];
        let answer = ConsensusOutput {
            decisions: vec![],
            resolutions: vec![Resolution {
                case_id: 0,
                pin_key: "77".into(),
                status: Correct,
                reasoning: String::new(),
                referenced_nets: vec![],
            }],
        };
        let out = apply(plan(&runs, 3), &answer);
        assert_eq!(out[0].findings[0].status, Incorrect);
        assert_eq!(out[0].findings[0].support_count, 2);
    }

    #[test]
    fn overlapping_keys_cluster() {
        let runs = vec![
            run(0, &[("U1", "1, 3", Incorrect), ("U1", "5", Correct)]),
            run(1, &[("U1", "1", Incorrect), ("U1", "5", Correct)]),
        ];
        let p = plan(&runs, 2);
        assert_eq!(p.cases.len(), 1);
        assert_eq!(p.settled.len(), 1);
        assert_eq!(p.settled[0].1.confidence, Confidence::High);
    }
}
