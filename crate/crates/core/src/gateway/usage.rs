use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use super::{AgentKind, AgentResponse, TokenUsage};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct KindUsage {
    pub calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    #[serde(serialize_with = "ser_ms")]
    pub latency: Duration,
}

fn ser_ms<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1000.0)
}

/// Token and latency totals per agent kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UsageLedger {
    pub per_kind: BTreeMap<AgentKind, KindUsage>,
}

impl UsageLedger {
    pub fn record(&mut self, kind: AgentKind, usage: TokenUsage, latency: Duration) {
        let e = self.per_kind.entry(kind).or_default();
        e.calls += 1;
        e.tokens_in += usage.tokens_in;
        e.tokens_out += usage.tokens_out;
        e.latency += latency;
    }

    pub fn get(&self, kind: AgentKind) -> KindUsage {
        self.per_kind.get(&kind).copied().unwrap_or_default()
    }

    pub fn totals(&self) -> TokenUsage {
        let mut t = TokenUsage::default();
        for u in self.per_kind.values() {
            t += TokenUsage {
                tokens_in: u.tokens_in,
                tokens_out: u.tokens_out,
            };
        }
        t
    }
}

/// Folds a stream of responses into a ledger.
pub fn record_usage<'a>(responses: impl IntoIterator<Item = (AgentKind, &'a AgentResponse)>) -> UsageLedger {
    let mut ledger = UsageLedger::default();
    for (kind, r) in responses {
        ledger.record(kind, r.usage, r.latency);
    }
    ledger
}
