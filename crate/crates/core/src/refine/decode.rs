use serde_json::Value;

use super::{AuditEntry, PredictionSet, Stage};

/// The span from the first `{` to the last `}`, if any.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Scalars become strings; arrays and nested objects contribute their leaves.
fn flatten(value: &Value, out: &mut Vec<String>) {
    match value {
        Value::Null => {}
        Value::String(s) => {
            let s = s.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
        }
        Value::Bool(b) => out.push(b.to_string()),
        Value::Number(n) => out.push(n.to_string()),
        Value::Array(items) => items.iter().for_each(|v| flatten(v, out)),
        Value::Object(map) => map.values().for_each(|v| flatten(v, out)),
    }
}

/// Parse each chunk completion of one document and union the values per key.
/// Completions that are not a JSON object are counted and skipped.
pub fn decode_completions<'a>(doc_id: &str, completions: impl IntoIterator<Item = &'a str>) -> PredictionSet {
    let mut preds = PredictionSet::new(doc_id, Stage::Initial);
    for (i, text) in completions.into_iter().enumerate() {
        let parsed = extract_json_object(text).and_then(|s| serde_json::from_str::<Value>(s).ok());
        let Some(Value::Object(map)) = parsed else {
            preds.parse_failures += 1;
            preds.audit.push(AuditEntry::ParseFailure {
                doc_id: doc_id.to_string(),
                completion: i,
            });
            continue;
        };
        for (key, value) in &map {
            let mut leaves = Vec::new();
            flatten(value, &mut leaves);
            for leaf in leaves {
                preds.insert(key.trim(), leaf);
            }
        }
    }
    preds
}
