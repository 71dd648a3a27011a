use std::collections::HashMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::{BackendSpec, Completer, Completion, OracleNoise, Usage};
use crate::chunker::Tokenizer;
use crate::corpus::{Document, Schema, ValueKind};
use crate::error::{Error, Result};
use crate::prompting::{new_document_text, Prompt, PromptPurpose};
use crate::refine::SynonymTable;
use crate::rendering::{render_markdown, MarkdownMode};

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];

const FAKE_NAMES: [&str; 8] = [
    "Quentin Harrowgate",
    "Orla Vantassel",
    "Meridian Holdings Ltd",
    "Brackwater Trust",
    "Ignatius Pell",
    "Solvay Ostrander",
    "Northgate Ventures",
    "Perpetua Lindqvist",
];

/// Answers from ground truth: emits exactly the values visible in the
/// prompt's document section, then perturbs them per the noise settings.
pub struct OracleBackend {
    model_name: String,
    noise: OracleNoise,
    schema: Schema,
    synonyms: SynonymTable,
    docs: HashMap<String, Document>,
}

fn tag_pattern() -> &'static Regex {
    static TAG: OnceLock<Regex> = OnceLock::new();
    TAG.get_or_init(|| Regex::new(r"\[\d+,\d+,\d+,\d+\]").expect("tag regex"))
}

/// Prompt document text reduced to its words: coordinate tags and Markdown
/// markup removed, whitespace collapsed.
pub(crate) fn visible_text(section: &str) -> String {
    let untagged = tag_pattern().replace_all(section, " ");
    let mut words: Vec<String> = Vec::new();
    for line in untagged.lines() {
        let line = line.trim();
        if line.starts_with('|') && line.chars().all(|c| matches!(c, '|' | '-' | ' ' | ':')) {
            continue;
        }
        let line = line.trim_start_matches('#');
        let line = line.replace("\\|", "\u{0}").replace('|', " ").replace('\u{0}', "|");
        words.extend(line.split_whitespace().map(str::to_string));
    }
    words.join(" ")
}

fn contains_words(haystack: &str, needle: &str) -> bool {
    let needle = needle.split_whitespace().collect::<Vec<_>>().join(" ");
    !needle.is_empty() && format!(" {haystack} ").contains(&format!(" {needle} "))
}

/// Deterministic generator for one noise decision.
fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn reformat(value: &str, kind: ValueKind, rng: &mut ChaCha8Rng) -> String {
    match kind {
        ValueKind::Date => {
            let parts: Vec<u32> = value.split('-').filter_map(|p| p.parse().ok()).collect();
            let [y, m, d] = parts[..] else { return value.to_string() };
            if !(1..=12).contains(&m) {
                return value.to_string();
            }
            let month = MONTHS[m as usize - 1];
            match rng.gen_range(0..3) {
                0 => format!("{month} {d}, {y}"),
                1 => format!("{d} {month} {y}"),
                _ => format!("{m:02}/{d:02}/{y}"),
            }
        }
        ValueKind::Numeric => match rng.gen_range(0..2) {
            0 => format!("No. {value}"),
            _ => format!("#{value}"),
        },
        ValueKind::FreeText => match rng.gen_range(0..3) {
            0 => value.to_uppercase(),
            1 => format!("  {}  ", value.split_whitespace().collect::<Vec<_>>().join("   ")),
            _ => value.to_lowercase(),
        },
    }
}

fn hallucinate(kind: ValueKind, rng: &mut ChaCha8Rng) -> String {
    match kind {
        ValueKind::Date => format!("{}-{:02}-{:02}", rng.gen_range(1900..1950), rng.gen_range(1..=12), rng.gen_range(1..=28)),
        ValueKind::Numeric => format!("9{:06}", rng.gen_range(0..1_000_000)),
        ValueKind::FreeText => FAKE_NAMES[rng.gen_range(0..FAKE_NAMES.len())].to_string(),
    }
}

fn mangle_key(name: &str, synonyms: &[String], rng: &mut ChaCha8Rng) -> String {
    let spaced = name.replace('_', " ");
    let choice = rng.gen_range(0..if synonyms.is_empty() { 2 } else { 3 });
    match choice {
        0 => spaced,
        1 => spaced
            .split(' ')
            .map(|w| {
                let mut c = w.chars();
                c.next().map(|f| f.to_uppercase().chain(c).collect::<String>()).unwrap_or_default()
            })
            .collect::<Vec<_>>()
            .join("-"),
        _ => synonyms[rng.gen_range(0..synonyms.len())].clone(),
    }
}

impl OracleBackend {
    pub fn new<'a>(
        spec: &BackendSpec,
        docs: impl IntoIterator<Item = &'a Document>,
        schema: Schema,
        synonyms: SynonymTable,
    ) -> Result<Self> {
        spec.noise.validate()?;
        Ok(OracleBackend {
            model_name: spec.model_name.clone(),
            noise: spec.noise,
            schema,
            synonyms,
            docs: docs.into_iter().map(|d| (d.id.clone(), d.clone())).collect(),
        })
    }

    fn doc(&self, id: &str) -> Result<&Document> {
        self.docs
            .get(id)
            .ok_or_else(|| Error::usage(format!("oracle has no document `{id}`")))
    }

    fn extraction(&self, doc: &Document, prompt: &Prompt) -> String {
        let visible = new_document_text(&prompt.text).map(visible_text).unwrap_or_default();
        let n = &self.noise;
        let seed = n.seed;
        let mut object = Map::new();
        for attr in self.schema.attributes() {
            let Some(truth) = doc.ground_truth.get(&attr.name) else { continue };
            let mut values: Vec<String> = Vec::new();
            for v in truth.iter().filter(|v| contains_words(&visible, v)) {
                let mut rng = rng_for(seed, &["reformat", &doc.id, &attr.name, v]);
                let shown = if rng.gen::<f64>() < n.value_reformat_rate {
                    reformat(v, attr.kind, &mut rng)
                } else {
                    v.clone()
                };
                values.push(shown);
                let mut rng = rng_for(seed, &["hallucinate", &doc.id, &attr.name, v]);
                if rng.gen::<f64>() < n.hallucination_rate {
                    values.push(hallucinate(attr.kind, &mut rng));
                }
            }
            if values.is_empty() {
                continue;
            }
            let mut rng = rng_for(seed, &["key", &doc.id, &attr.name]);
            let key = if rng.gen::<f64>() < n.key_mangle_rate {
                mangle_key(&attr.name, self.synonyms.aliases(&attr.name), &mut rng)
            } else {
                attr.name.clone()
            };
            let value = match values.len() {
                1 => Value::String(values.remove(0)),
                _ => Value::Array(values.into_iter().map(Value::String).collect()),
            };
            object.insert(key, value);
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(object)).expect("json serializes");
        let chunk = prompt.chunk_index.to_string();
        let mut rng = rng_for(seed, &["corrupt", &doc.id, &chunk]);
        if rng.gen::<f64>() < n.json_corruption_rate {
            text.pop();
        }
        text
    }

    fn summary(&self, doc: &Document) -> String {
        let mut out = format!("Document {}.", doc.id);
        for attr in self.schema.attributes() {
            if let Some(values) = doc.ground_truth.get(&attr.name).filter(|v| !v.is_empty()) {
                out.push_str(&format!(" The {} is {}.", attr.name.replace('_', " "), values.join(" and ")));
            }
        }
        out
    }
}

impl Completer for OracleBackend {
    fn complete(&self, prompt: &Prompt) -> Result<Completion> {
        let doc = self.doc(&prompt.doc_id)?;
        let text = match prompt.purpose {
            PromptPurpose::Extraction => self.extraction(doc, prompt),
            PromptPurpose::Condense => self.summary(doc),
            PromptPurpose::Markdown => render_markdown(doc, MarkdownMode::RuleBased, None)?.serialize(),
        };
        let tokenizer = Tokenizer::default();
        Ok(Completion {
            prompt_digest: String::new(),
            model_name: self.model_name.clone(),
            usage: Usage {
                input_tokens: tokenizer.cost(&prompt.text) as u64,
                output_tokens: tokenizer.cost(&text) as u64,
            },
            text,
            from_cache: false,
        })
    }
}
