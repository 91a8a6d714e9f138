//! Functional-group selection, multi-run group review, consensus and error
//! grouping.

mod checklist;
mod consensus;
mod grouping;
mod group_review;
mod select;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datasheet::PartRef;
use crate::gateway::GatewayError;
use crate::natural::natural_cmp;

pub use checklist::{checklist_kind, Checklists};
pub use consensus::{combine_consensus, ConsensusCase, ConsensusCaseKind, ConsensusOutput};
pub use grouping::{error_group_id, finding_nets, group_errors, summarize_groups, GroupedFinding};
pub use group_review::{fan_out_reviews, review_group_once, FanOut, GroupContext, RunFailure, NO_DATASHEET};
pub use select::{select_groups, Selection, UNGROUPED};

/// Default number of concurrent review runs per group.
pub const DEFAULT_RUNS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Correct,
    Incorrect,
    Warning,
    Unverifiable,
}

impl VerdictStatus {
    pub fn label(&self) -> &'static str {
        match self {
            VerdictStatus::Correct => "Correct",
            VerdictStatus::Incorrect => "Incorrect",
            VerdictStatus::Warning => "Warning",
            VerdictStatus::Unverifiable => "Unverifiable",
        }
    }

    /// Findings with these statuses become review comments.
    pub fn is_problem(&self) -> bool {
        matches!(self, VerdictStatus::Incorrect | VerdictStatus::Warning)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinVerdict {
    pub pin_key: String,
    pub status: VerdictStatus,
    pub reasoning: String,
    #[serde(default)]
    pub referenced_nets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentAnalysis {
    pub designator: String,
    pub verdicts: Vec<PinVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_index: usize,
    pub analyses: Vec<ComponentAnalysis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MultiRun,
    SingleRunVerified,
    ContradictionResolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusFinding {
    pub pin_key: String,
    pub status: VerdictStatus,
    pub reasoning: String,
    pub referenced_nets: Vec<String>,
    pub support_count: usize,
    pub confidence: Confidence,
    pub provenance: Provenance,
}

/// Consensus counterpart of [`ComponentAnalysis`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusAnalysis {
    pub designator: String,
    pub findings: Vec<ConsensusFinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalGroup {
    pub name: String,
    pub designators: Vec<String>,
    pub parts: Vec<PartRef>,
    /// Datasheet URLs embedded in the schematic, by designator.
    pub datasheet_urls: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorGroup {
    pub group_id: String,
    pub findings: Vec<GroupedFinding>,
    pub root_cause_summary: String,
}

impl ErrorGroup {
    /// Member designators in natural order, without repeats.
    pub fn designators(&self) -> Vec<&str> {
        let mut d: Vec<&str> = self.findings.iter().map(|f| f.designator.as_str()).collect();
        d.sort_by(|a, b| natural_cmp(a, b));
        d.dedup();
        d
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ReviewError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("all {} review runs of group `{group}` failed: {}", failures.len(), failures.join("; "))]
    AllRunsFailed { group: String, failures: Vec<String> },
}

/// Splits a comma-separated pin key ("1, 3") into trimmed, non-empty pin
/// designators.
pub fn parse_pin_key(key: &str) -> Vec<String> {
    key.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

/// Pins in natural order without repeats.
pub fn sorted_pins<I: IntoIterator<Item = String>>(pins: I) -> Vec<String> {
    let mut v: Vec<String> = pins.into_iter().collect();
    v.sort_by(|a, b| natural_cmp(a, b));
    v.dedup();
    v
}

/// Canonical form of a pin key: pins sorted naturally, deduplicated and
/// joined with ", ".
pub fn normalize_pin_key(key: &str) -> String {
    sorted_pins(parse_pin_key(key)).join(", ")
}

pub(crate) fn sort_nets(nets: &mut Vec<String>) {
    nets.sort_by(|a, b| natural_cmp(a, b));
    nets.dedup();
}

/// Orders findings by their first pin, then by the whole key.
pub(crate) fn pin_key_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    let fa = parse_pin_key(a);
    let fb = parse_pin_key(b);
    let first = |v: &Vec<String>| v.first().cloned().unwrap_or_default();
    natural_cmp(&first(&fa), &first(&fb)).then_with(|| natural_cmp(a, b))
}
