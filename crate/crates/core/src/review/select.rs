//! Partitioning a page into functional groups.

use std::collections::{BTreeMap, HashSet};

use serde::Deserialize;
use serde_json::json;

use super::FunctionalGroup;
use crate::datasheet::PartRef;
use crate::gateway::{system_prompt, AgentKind, AgentRequest, GatewayError, LlmGateway};
use crate::natural::natural_cmp;
use crate::schematic::{serialize_page_xml, Page};

/// Name of the residual group holding components no agent group claimed.
pub const UNGROUPED: &str = "ungrouped";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub groups: Vec<FunctionalGroup>,
    /// Repairs applied to the agent's answer.
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct SelectionOutput {
    groups: Vec<RawGroup>,
}

#[derive(Deserialize)]
struct RawGroup {
    name: String,
    designators: Vec<String>,
}

/// Asks the selection agent for groups and repairs the answer: unknown
/// designators are dropped, a designator claimed twice stays with the first
/// group, empty groups disappear and unclaimed components form the
/// [`UNGROUPED`] group.
pub async fn select_groups(
    page: &Page,
    gateway: &LlmGateway,
    span: Option<&str>,
) -> Result<Selection, GatewayError> {
    if page.components.is_empty() {
        return Ok(Selection::default());
    }
    let payload = json!({
        "page_id": page.id,
        "schematic": serialize_page_xml(page),
    });
    let mut req = AgentRequest::new(
        AgentKind::Selection,
        system_prompt(AgentKind::Selection),
        payload.to_string(),
    );
    if let Some(s) = span {
        req = req.with_span(format!("{s}/selection"));
    }
    let (out, _) = gateway.complete_typed::<SelectionOutput>(&req).await?;
    Ok(repair_selection(page, out.groups.into_iter().map(|g| (g.name, g.designators))))
}

pub(crate) fn repair_selection(page: &Page, raw: impl IntoIterator<Item = (String, Vec<String>)>) -> Selection {
    let mut sel = Selection::default();
    let mut claimed: HashSet<String> = HashSet::new();
    let mut named: Vec<(String, Vec<String>)> = Vec::new();
    for (name, designators) in raw {
        let mut kept = Vec::new();
        for d in designators {
            if page.component(&d).is_none() {
                sel.warnings.push(format!("group `{name}`: unknown designator {d} dropped"));
            } else if !claimed.insert(d.clone()) {
                sel.warnings.push(format!("group `{name}`: {d} already grouped, dropped"));
            } else {
                kept.push(d);
            }
        }
        if kept.is_empty() {
            sel.warnings.push(format!("group `{name}` has no valid members, dropped"));
        } else {
            named.push((name, kept));
        }
    }
    let mut rest: Vec<String> = page
        .components
        .iter()
        .map(|c| c.designator.clone())
        .filter(|d| !claimed.contains(d))
        .collect();
    if !rest.is_empty() {
        rest.dedup();
        named.push((UNGROUPED.to_string(), rest));
    }
    sel.groups = named.into_iter().map(|(name, d)| build_group(page, name, d)).collect();
    sel
}

fn build_group(page: &Page, name: String, mut designators: Vec<String>) -> FunctionalGroup {
    designators.sort_by(|a, b| natural_cmp(a, b));
    let mut parts: Vec<PartRef> = Vec::new();
    let mut datasheet_urls = BTreeMap::new();
    for d in &designators {
        let Some(c) = page.component(d) else { continue };
        if let Some(p) = PartRef::of_component(c) {
            if !parts.iter().any(|q| q.key() == p.key()) {
                parts.push(p);
            }
        }
        if let Some(u) = &c.datasheet_url {
            datasheet_urls.insert(d.clone(), u.clone());
        }
    }
    FunctionalGroup {
        name,
        designators,
        parts,
        datasheet_urls,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schematic::Component;

    fn page(ds: &[&str]) -> Page {
        Page {
            id: "P1".into(),
            components: ds
                .iter()
                .map(|d| Component {
                    designator: d.to_string(),
                    mpn: Some(format!("MPN-{}", &d[..1])),
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn ghost_designators_and_residual() {
        let p = page(&["U1", "R1", "R2", "C1", "R10"]);
        let sel = repair_selection(
            &p,
            vec![
                ("power stage".to_string(), vec!["U1".into(), "R2".into(), "U9".into(), "R1".into()]),
                ("dup".to_string(), vec!["R1".into()]),
            ],
        );
        assert_eq!(sel.groups.len(), 2);
        assert_eq!(sel.groups[0].designators, vec!["R1", "R2", "U1"]);
        assert_eq!(sel.groups[0].parts.len(), 2);
        assert_eq!(sel.groups[1].name, UNGROUPED);
        assert_eq!(sel.groups[1].designators, vec!["C1", "R10"]);
        assert!(sel.warnings.iter().any(|w| w.contains("U9")));
        assert!(sel.warnings.iter().any(|w| w.contains("`dup`")));
    }
}
