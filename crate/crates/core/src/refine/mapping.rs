use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AuditEntry, PredictionSet, Stage};
use crate::corpus::Schema;
use crate::error::{Error, Result};

/// Lowercase, with runs of spaces, hyphens and underscores folded to one `_`.
pub fn normalize_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    let mut pending = false;
    for c in key.trim().chars() {
        if c.is_whitespace() || c == '-' || c == '_' {
            pending = !out.is_empty();
        } else {
            if pending {
                out.push('_');
                pending = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    out
}

fn tokens(key: &str) -> BTreeSet<String> {
    normalize_key(key)
        .split('_')
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Attribute name to lowercase aliases. No alias belongs to two attributes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynonymTable {
    aliases: BTreeMap<String, Vec<String>>,
}

impl SynonymTable {
    pub fn new(aliases: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut owner: BTreeMap<String, &str> = BTreeMap::new();
        for (attr, list) in &aliases {
            for alias in list {
                if alias.chars().any(char::is_uppercase) {
                    return Err(Error::usage(format!("synonym `{alias}` for `{attr}` must be lowercase")));
                }
                if let Some(prev) = owner.insert(normalize_key(alias), attr) {
                    if prev != attr {
                        return Err(Error::usage(format!("synonym `{alias}` maps to both `{prev}` and `{attr}`")));
                    }
                }
            }
        }
        Ok(SynonymTable { aliases })
    }

    /// Seeds for the registration-form attributes.
    pub fn vrdu_default() -> Self {
        let table: [(&str, &[&str]); 6] = [
            ("file_date", &["filing date", "date filed", "date of filing", "date"]),
            (
                "foreign_princ_name",
                &["foreign principal", "foreign principal name", "name of foreign principal", "principal"],
            ),
            ("registrant_name", &["registrant", "name of registrant", "registrant full name"]),
            (
                "registration_num",
                &["registration number", "registration no", "registration no.", "registration #", "reg no"],
            ),
            ("signer_name", &["signer", "signatory", "name of signer", "signed by"]),
            ("signer_title", &["title", "title of signer", "position", "signatory title"]),
        ];
        let aliases = table
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect();
        SynonymTable::new(aliases).expect("built-in synonyms are consistent")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SynonymTable::new(serde_json::from_str(&text)?)
    }

    pub fn aliases(&self, attribute: &str) -> &[String] {
        self.aliases.get(attribute).map_or(&[], Vec::as_slice)
    }

    pub fn lookup(&self, key: &str) -> Option<&str> {
        let key = normalize_key(key);
        self.aliases
            .iter()
            .find(|(_, list)| list.iter().any(|a| normalize_key(a) == key))
            .map(|(attr, _)| attr.as_str())
    }

    /// Add entries from `other`; conflicting aliases are an error.
    pub fn extend(&self, other: &SynonymTable) -> Result<Self> {
        let mut merged = self.aliases.clone();
        for (k, v) in &other.aliases {
            let slot = merged.entry(k.clone()).or_default();
            for a in v {
                if !slot.contains(a) {
                    slot.push(a.clone());
                }
            }
        }
        SynonymTable::new(merged)
    }
}

enum Resolution<'a> {
    Attr(&'a str),
    Ambiguous(Vec<String>),
    Unresolved,
}

fn resolve<'a>(key: &str, schema: &'a Schema, synonyms: &SynonymTable) -> Resolution<'a> {
    if let Some(a) = schema.get(key) {
        return Resolution::Attr(&a.name);
    }
    let norm = normalize_key(key);
    if let Some(a) = schema.names().find(|n| normalize_key(n) == norm) {
        return Resolution::Attr(a);
    }
    if let Some(a) = synonyms.lookup(key).and_then(|a| schema.get(a)) {
        return Resolution::Attr(&a.name);
    }
    let key_tokens = tokens(key);
    if key_tokens.is_empty() {
        return Resolution::Unresolved;
    }
    let candidates: Vec<&str> = schema
        .names()
        .filter(|n| {
            let t = tokens(n);
            !t.is_empty() && (t.is_subset(&key_tokens) || t.is_superset(&key_tokens))
        })
        .collect();
    match candidates.as_slice() {
        [] => Resolution::Unresolved,
        [one] => Resolution::Attr(one),
        many => Resolution::Ambiguous(many.iter().map(|s| s.to_string()).collect()),
    }
}

/// Move every key onto a schema attribute, or drop it. Values are untouched.
pub fn map_keys(preds: &PredictionSet, schema: &Schema, synonyms: &SynonymTable) -> PredictionSet {
    let mut out = PredictionSet::new(&preds.doc_id, preds.stage.max(Stage::Mapped));
    out.parse_failures = preds.parse_failures;
    out.audit = preds.audit.clone();
    for (key, values) in &preds.entries {
        match resolve(key, schema, synonyms) {
            Resolution::Attr(attr) => {
                if attr != key {
                    log::debug!("{}: key `{key}` mapped to `{attr}`", preds.doc_id);
                }
                out.entries.entry(attr.to_string()).or_default().extend(values.iter().cloned());
            }
            Resolution::Ambiguous(candidates) => {
                log::info!("{}: key `{key}` is ambiguous between {candidates:?}; dropped", preds.doc_id);
                out.audit.push(AuditEntry::KeyAmbiguous {
                    doc_id: preds.doc_id.clone(),
                    key: key.clone(),
                    candidates,
                });
            }
            Resolution::Unresolved => {
                log::info!("{}: key `{key}` matches no schema attribute; dropped", preds.doc_id);
                out.audit.push(AuditEntry::KeyDropped {
                    doc_id: preds.doc_id.clone(),
                    key: key.clone(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::decode_completions;

    fn schema() -> Schema {
        Schema::vrdu_registration()
    }

    #[test]
    fn spaced_key_normalizes() {
        let p = decode_completions("d", [r#"{"file date": "1982-10-31"}"#]);
        let m = map_keys(&p, &schema(), &SynonymTable::default());
        assert_eq!(m.values("file_date").collect::<Vec<_>>(), ["1982-10-31"]);
        assert_eq!(m.stage, Stage::Mapped);
    }

    #[test]
    fn synonym_lookup() {
        let p = decode_completions("d", [r#"{"Registration Number": "1833"}"#]);
        let m = map_keys(&p, &schema(), &SynonymTable::vrdu_default());
        assert_eq!(m.values("registration_num").collect::<Vec<_>>(), ["1833"]);
    }

    #[test]
    fn conformant_keys_unchanged() {
        let p = decode_completions("d", [r#"{"signer_name": "A", "file_date": "2000-01-01"}"#]);
        let m = map_keys(&p, &schema(), &SynonymTable::vrdu_default());
        assert_eq!(m.entries, p.entries);
    }

    #[test]
    fn partial_match_unique_subset() {
        // {registrant, name} is the only attribute token set inside the key
        let p = decode_completions("d", [r#"{"registrant name full": "Acme"}"#]);
        let m = map_keys(&p, &schema(), &SynonymTable::default());
        assert_eq!(m.values("registrant_name").collect::<Vec<_>>(), ["Acme"]);
    }

    #[test]
    fn ambiguous_partial_match_is_dropped() {
        // "name" is a subset of three attributes
        let p = decode_completions("d", [r#"{"name": "X"}"#]);
        let m = map_keys(&p, &schema(), &SynonymTable::default());
        assert!(m.entries.is_empty());
        assert!(matches!(&m.audit[0], AuditEntry::KeyAmbiguous { candidates, .. } if candidates.len() == 3));
    }

    #[test]
    fn unknown_key_dropped() {
        let p = decode_completions("d", [r#"{"weather": "sunny"}"#]);
        let m = map_keys(&p, &schema(), &SynonymTable::default());
        assert!(m.entries.is_empty());
        assert!(matches!(&m.audit[0], AuditEntry::KeyDropped { key, .. } if key == "weather"));
    }

    #[test]
    fn conflicting_alias_rejected() {
        let mut raw = BTreeMap::new();
        raw.insert("a".to_string(), vec!["x".to_string()]);
        raw.insert("b".to_string(), vec!["x".to_string()]);
        assert!(SynonymTable::new(raw).is_err());
    }

    #[test]
    fn normalize_key_folds_separators() {
        assert_eq!(normalize_key("  File - Date "), "file_date");
        assert_eq!(normalize_key("file__date"), "file_date");
    }
}
