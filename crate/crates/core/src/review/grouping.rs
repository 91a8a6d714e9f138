//! Clustering problem findings into error groups with stable identifiers.
//!
//! Two Incorrect/Warning findings share a group iff they are connected
//! through a common net or the same component. A finding's nets are its
//! referenced nets plus the nets attached to the pins in its key.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{normalize_pin_key, pin_key_cmp, sort_nets, ConsensusAnalysis, ConsensusFinding, ErrorGroup};
use crate::gateway::{system_prompt, AgentKind, AgentRequest, GatewayError, LlmGateway};
use crate::hashing::short_digest;
use crate::natural::natural_cmp;
use crate::schematic::Page;
use crate::unionfind::UnionFind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedFinding {
    pub designator: String,
    #[serde(flatten)]
    pub finding: ConsensusFinding,
}

/// Referenced nets plus the nets on the finding's pins, sorted.
pub fn finding_nets(page: &Page, designator: &str, f: &ConsensusFinding) -> Vec<String> {
    let mut nets = f.referenced_nets.clone();
    for pin in super::parse_pin_key(&f.pin_key) {
        nets.extend(page.nets_of_pin(designator, &pin));
    }
    sort_nets(&mut nets);
    nets
}

/// First 12 hex characters of the SHA-256 over the sorted member lines
/// `designator \t normalized pin key \t referenced nets (sorted, comma-joined)`.
pub fn error_group_id(members: &[GroupedFinding]) -> String {
    let mut lines: Vec<String> = members
        .iter()
        .map(|m| {
            let mut nets = m.finding.referenced_nets.clone();
            sort_nets(&mut nets);
            format!("{}\t{}\t{}", m.designator, normalize_pin_key(&m.finding.pin_key), nets.join(","))
        })
        .collect();
    lines.sort();
    short_digest(lines.join("\n"), 12)
}

fn member_cmp(a: &GroupedFinding, b: &GroupedFinding) -> std::cmp::Ordering {
    natural_cmp(&a.designator, &b.designator)
        .then_with(|| pin_key_cmp(&a.finding.pin_key, &b.finding.pin_key))
        .then_with(|| a.finding.status.cmp(&b.finding.status))
}

pub fn group_errors(analyses: &[ConsensusAnalysis], page: &Page) -> Vec<ErrorGroup> {
    let mut items: Vec<GroupedFinding> = analyses
        .iter()
        .flat_map(|a| {
            a.findings.iter().filter(|f| f.status.is_problem()).map(|f| GroupedFinding {
                designator: a.designator.clone(),
                finding: f.clone(),
            })
        })
        .collect();
    items.sort_by(member_cmp);
    let nets: Vec<Vec<String>> = items
        .iter()
        .map(|m| finding_nets(page, &m.designator, &m.finding))
        .collect();

    let mut uf = UnionFind::new(items.len());
    let mut first_by_net: HashMap<&str, usize> = HashMap::new();
    let mut first_by_component: HashMap<&str, usize> = HashMap::new();
    for (i, m) in items.iter().enumerate() {
        if let Some(&j) = first_by_component.get(m.designator.as_str()) {
            uf.union(i, j);
        } else {
            first_by_component.insert(&m.designator, i);
        }
        for n in &nets[i] {
            if let Some(&j) = first_by_net.get(n.as_str()) {
                uf.union(i, j);
            } else {
                first_by_net.insert(n, i);
            }
        }
    }

    uf.groups()
        .into_iter()
        .map(|idx| {
            let members: Vec<GroupedFinding> = idx.iter().map(|&i| items[i].clone()).collect();
            let member_nets: Vec<&Vec<String>> = idx.iter().map(|&i| &nets[i]).collect();
            ErrorGroup {
                group_id: error_group_id(&members),
                root_cause_summary: local_summary(&members, &member_nets),
                findings: members,
            }
        })
        .collect()
}

fn pins_phrase(key: &str) -> String {
    if super::parse_pin_key(key).len() > 1 {
        format!("pins {key}")
    } else {
        format!("pin {key}")
    }
}

fn local_summary(members: &[GroupedFinding], nets: &[&Vec<String>]) -> String {
    let primary = members
        .iter()
        .find(|m| m.finding.status == super::VerdictStatus::Incorrect)
        .unwrap_or(&members[0]);
    let mut s = format!(
        "{} {} ({}): {}",
        primary.designator,
        pins_phrase(&primary.finding.pin_key),
        primary.finding.status.label().to_lowercase(),
        primary.finding.reasoning.trim()
    );
    let others: Vec<String> = members
        .iter()
        .filter(|m| !std::ptr::eq(*m, primary))
        .map(|m| format!("{} {}", m.designator, pins_phrase(&m.finding.pin_key)))
        .collect();
    if !others.is_empty() {
        let mut count: HashMap<&str, usize> = HashMap::new();
        for n in nets.iter().flat_map(|v| v.iter()) {
            *count.entry(n).or_default() += 1;
        }
        let mut shared: Vec<String> = count.into_iter().filter(|(_, c)| *c > 1).map(|(n, _)| n.to_string()).collect();
        sort_nets(&mut shared);
        if !s.ends_with(['.', '!', '?']) {
            s.push('.');
        }
        s.push_str(&format!(" Also affects {}", others.join(", ")));
        if !shared.is_empty() {
            s.push_str(&format!(" via {}", shared.join(", ")));
        }
        s.push('.');
    }
    s
}

#[derive(Deserialize)]
struct SummaryOutput {
    summaries: Vec<SummaryItem>,
}

#[derive(Deserialize)]
struct SummaryItem {
    group_id: String,
    summary: String,
}

/// Replaces local root-cause summaries with the error-grouping agent's.
/// Groups the agent does not mention keep their local summary.
pub async fn summarize_groups(
    groups: &mut [ErrorGroup],
    gateway: &LlmGateway,
    span: Option<&str>,
) -> Result<(), GatewayError> {
    if groups.is_empty() {
        return Ok(());
    }
    let payload = json!({
        "groups": groups.iter().map(|g| json!({
            "group_id": g.group_id,
            "findings": g.findings,
        })).collect::<Vec<_>>(),
    });
    let mut req = AgentRequest::new(
        AgentKind::ErrorGrouping,
        system_prompt(AgentKind::ErrorGrouping),
        payload.to_string(),
    );
    if let Some(s) = span {
        req = req.with_span(format!("{s}/error_grouping"));
    }
    let (out, _) = gateway.complete_typed::<SummaryOutput>(&req).await?;
    for item in out.summaries {
        if let Some(g) = groups.iter_mut().find(|g| g.group_id == item.group_id) {
            if !item.summary.trim().is_empty() {
                g.root_cause_summary = item.summary.trim().to_string();
            }
        }
    }
    Ok(())
}
