//! Output refinement: decoding raw completions, aligning keys to the schema,
//! and normalizing values by attribute type.

mod cleaning;
mod decode;
mod mapping;

pub use cleaning::{clean_free_text, clean_numeric, clean_values, parse_date};
pub use decode::{decode_completions, extract_json_object};
pub use mapping::{map_keys, normalize_key, SynonymTable};

use std::fmt;
use std::str::FromStr;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

use crate::corpus::Schema;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Mapped,
    Cleaned,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Initial, Stage::Mapped, Stage::Cleaned];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Initial => "initial",
            Stage::Mapped => "mapped",
            Stage::Cleaned => "cleaned",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "initial" => Ok(Stage::Initial),
            "mapped" => Ok(Stage::Mapped),
            "cleaned" => Ok(Stage::Cleaned),
            other => Err(Error::usage(format!("unknown refinement stage `{other}`"))),
        }
    }
}

/// One refinement decision worth auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEntry {
    ParseFailure { doc_id: String, completion: usize },
    KeyDropped { doc_id: String, key: String },
    KeyAmbiguous { doc_id: String, key: String, candidates: Vec<String> },
    NonConformant { doc_id: String, attribute: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub doc_id: String,
    pub stage: Stage,
    /// Key (a schema attribute once mapped) to distinct values in first-seen order.
    pub entries: IndexMap<String, IndexSet<String>>,
    pub parse_failures: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit: Vec<AuditEntry>,
}

impl PredictionSet {
    pub fn new(doc_id: impl Into<String>, stage: Stage) -> Self {
        PredictionSet {
            doc_id: doc_id.into(),
            stage,
            entries: IndexMap::new(),
            parse_failures: 0,
            audit: Vec::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.entry(key.into()).or_default().insert(value.into());
    }

    pub fn values(&self, key: &str) -> impl Iterator<Item = &str> {
        self.entries.get(key).into_iter().flatten().map(String::as_str)
    }

    pub fn value_count(&self) -> usize {
        self.entries.values().map(IndexSet::len).sum()
    }

    /// Union per key; failures and audit entries add up.
    pub fn merge(&mut self, other: PredictionSet) {
        for (k, vs) in other.entries {
            let slot = self.entries.entry(k).or_default();
            slot.extend(vs);
        }
        self.parse_failures += other.parse_failures;
        self.audit.extend(other.audit);
    }
}

/// Carry an initial prediction set through to `stage`.
pub fn refine_to(initial: &PredictionSet, stage: Stage, schema: &Schema, synonyms: &SynonymTable) -> PredictionSet {
    match stage {
        Stage::Initial => initial.clone(),
        Stage::Mapped => map_keys(initial, schema, synonyms),
        Stage::Cleaned => clean_values(&map_keys(initial, schema, synonyms), schema),
    }
}
