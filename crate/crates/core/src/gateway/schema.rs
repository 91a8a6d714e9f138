//! Response schema registry: a JSON Schema per id plus an optional semantic
//! check for constraints JSON Schema cannot express.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde_json::Value;

pub type SemanticCheck = Arc<dyn Fn(&Value) -> Result<(), String> + Send + Sync>;

struct Entry {
    validator: jsonschema::Validator,
    semantic: Option<SemanticCheck>,
}

#[derive(Clone, Default)]
pub struct SchemaRegistry {
    entries: HashMap<String, Arc<Entry>>,
}

const BUILTIN: [(&str, &str); 7] = [
    ("selection.v1", include_str!("../../schemas/agents/selection.v1.json")),
    ("head_analysis.v1", include_str!("../../schemas/agents/head_analysis.v1.json")),
    ("extraction.v1", include_str!("../../schemas/agents/extraction.v1.json")),
    ("critic.v1", include_str!("../../schemas/agents/critic.v1.json")),
    ("group_review.v1", include_str!("../../schemas/agents/group_review.v1.json")),
    ("consensus.v1", include_str!("../../schemas/agents/consensus.v1.json")),
    ("error_grouping.v1", include_str!("../../schemas/agents/error_grouping.v1.json")),
];

impl SchemaRegistry {
    /// Registry with every agent response schema shipped in `schemas/agents/`.
    pub fn builtin() -> Self {
        let mut r = Self::default();
        for (id, text) in BUILTIN {
            let schema: Value = serde_json::from_str(text).expect("builtin schema is JSON");
            let semantic: Option<SemanticCheck> = match id {
                "extraction.v1" => Some(Arc::new(unique_spec_pins)),
                "group_review.v1" => Some(Arc::new(disjoint_pin_keys)),
                "consensus.v1" => Some(Arc::new(unique_case_ids)),
                _ => None,
            };
            r.register(id, &schema, semantic).expect("builtin schema compiles");
        }
        r
    }

    pub fn register(&mut self, id: &str, schema: &Value, semantic: Option<SemanticCheck>) -> Result<(), String> {
        let validator = jsonschema::validator_for(schema).map_err(|e| e.to_string())?;
        self.entries
            .insert(id.to_string(), Arc::new(Entry { validator, semantic }));
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn validate(&self, id: &str, value: &Value) -> Result<(), String> {
        let entry = self
            .entries
            .get(id)
            .ok_or_else(|| format!("schema `{id}` is not registered"))?;
        let errors: Vec<String> = entry
            .validator
            .iter_errors(value)
            .take(5)
            .map(|e| format!("{} at `{}`", e, e.instance_path))
            .collect();
        if !errors.is_empty() {
            return Err(errors.join("; "));
        }
        match &entry.semantic {
            Some(check) => check(value),
            None => Ok(()),
        }
    }
}

fn unique_spec_pins(v: &Value) -> Result<(), String> {
    let mut seen = HashSet::new();
    for p in v["pins"].as_array().into_iter().flatten() {
        let d = p["designator"].as_str().unwrap_or_default();
        if !seen.insert(d) {
            return Err(format!("duplicate pin designator `{d}` in pins"));
        }
    }
    Ok(())
}

fn disjoint_pin_keys(v: &Value) -> Result<(), String> {
    for a in v["analyses"].as_array().into_iter().flatten() {
        let designator = a["designator"].as_str().unwrap_or_default();
        let mut seen = HashSet::new();
        for verdict in a["verdicts"].as_array().into_iter().flatten() {
            let key = verdict["pin_key"].as_str().unwrap_or_default();
            let pins = crate::review::parse_pin_key(key);
            if pins.is_empty() {
                return Err(format!("{designator}: pin_key `{key}` names no pins"));
            }
            for p in pins {
                if !seen.insert(p.clone()) {
                    return Err(format!("{designator}: pin `{p}` appears in more than one pin_key"));
                }
            }
        }
    }
    Ok(())
}

fn unique_case_ids(v: &Value) -> Result<(), String> {
    for field in ["decisions", "resolutions"] {
        let mut seen = HashSet::new();
        for d in v[field].as_array().into_iter().flatten() {
            let id = d["case_id"].as_u64().unwrap_or_default();
            if !seen.insert(id) {
                return Err(format!("case_id {id} answered twice in {field}"));
            }
        }
    }
    Ok(())
}
