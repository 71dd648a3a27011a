//! Normalized document model, dataset adapters, and few-shot example selection.
//!
//! Every adapter converts its dataset into the normalized JSONL form, one
//! document per line:
//!
//! ```json
//! {"id": "...", "pages": [{"width": 612, "height": 792,
//!   "words": [{"text": "FARA", "box": [x0, y0, x1, y1]}]}],
//!  "ground_truth": {"file_date": ["1982-10-31"]}}
//! ```

mod adapters;
mod schema;

pub use adapters::{load_funsd, load_vrdu};
pub use schema::{load_schema, Attribute, Schema, ValueKind, FREE_TEXT_PATTERN};

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Attribute name to every annotated value, in annotation order.
pub type EntityMap = BTreeMap<String, Vec<String>>;

/// Example counts the prompt templates support.
pub const EXAMPLE_COUNTS: [usize; 4] = [0, 1, 3, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl Word {
    pub fn new(text: impl Into<String>, bbox: [f64; 4]) -> Self {
        Word {
            text: text.into(),
            bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub words: Vec<Word>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub pages: Vec<Page>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub ground_truth: EntityMap,
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::parse("", "id", "document id is empty"));
        }
        if self.pages.is_empty() {
            return Err(Error::parse(&self.id, "pages", "document has no pages"));
        }
        for (p, page) in self.pages.iter().enumerate() {
            if !(page.width > 0.0 && page.height > 0.0) {
                return Err(Error::parse(
                    &self.id,
                    format!("pages[{p}]"),
                    format!("page dimensions must be positive, got {}x{}", page.width, page.height),
                ));
            }
            for (w, word) in page.words.iter().enumerate() {
                let field = || format!("pages[{p}].words[{w}]");
                if word.text.is_empty() {
                    return Err(Error::parse(&self.id, format!("{}.text", field()), "empty word text"));
                }
                let [x0, y0, x1, y1] = word.bbox;
                let problem = if !word.bbox.iter().all(|c| c.is_finite()) {
                    Some("non-finite coordinate")
                } else if x1 < x0 {
                    Some("x1 < x0")
                } else if y1 < y0 {
                    Some("y1 < y0")
                } else if x0 < 0.0 || y0 < 0.0 || x1 > page.width || y1 > page.height {
                    Some("box lies outside the page")
                } else {
                    None
                };
                if let Some(problem) = problem {
                    return Err(Error::parse(
                        &self.id,
                        format!("{}.box", field()),
                        format!("word index {w}: {problem} in {:?}", word.bbox),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn words(&self) -> impl Iterator<Item = &Word> {
        self.pages.iter().flat_map(|p| p.words.iter())
    }

    /// All words joined by single spaces, without layout.
    pub fn plain_text(&self) -> String {
        let words: Vec<&str> = self.words().map(|w| w.text.as_str()).collect();
        words.join(" ")
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(deserializer: D) -> std::result::Result<EntityMap, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    let raw = BTreeMap::<String, OneOrMany>::deserialize(deserializer)?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| {
            let values = match v {
                OneOrMany::One(s) => vec![s],
                OneOrMany::Many(v) => v,
            };
            (k, values)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adapter {
    Vrdu,
    Funsd,
    Normalized,
}

impl FromStr for Adapter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vrdu" => Ok(Adapter::Vrdu),
            "funsd" => Ok(Adapter::Funsd),
            "normalized" | "jsonl" => Ok(Adapter::Normalized),
            other => Err(Error::usage(format!(
                "unknown adapter `{other}` (expected vrdu, funsd or normalized)"
            ))),
        }
    }
}

/// An immutable collection of validated documents plus the schema the
/// adapter could infer, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub schema: Option<Schema>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Corpus> {
        let mut seen = HashSet::new();
        for doc in &documents {
            doc.validate()?;
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::parse(&doc.id, "id", "duplicate document id"));
            }
        }
        Ok(Corpus {
            documents,
            schema: None,
        })
    }

    pub fn with_schema(mut self, schema: Schema) -> Self {
        self.schema = Some(schema);
        self
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Every ground-truth attribute must be a schema slot.
    pub fn validate_against(&self, schema: &Schema) -> Result<()> {
        for doc in &self.documents {
            if let Some(attr) = doc.ground_truth.keys().find(|k| !schema.contains(k)) {
                return Err(Error::parse(
                    &doc.id,
                    format!("ground_truth.{attr}"),
                    "attribute is not defined by the schema",
                ));
            }
        }
        Ok(())
    }

    /// Free-text schema over the union of ground-truth keys, first-seen order.
    pub fn dynamic_schema(&self) -> Result<Schema> {
        let mut keys: Vec<&str> = Vec::new();
        for doc in &self.documents {
            for k in doc.ground_truth.keys() {
                if !keys.contains(&k.as_str()) {
                    keys.push(k);
                }
            }
        }
        Schema::dynamic(keys.into_iter().map(str::to_string))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save_normalized(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

pub fn load_corpus(path: impl AsRef<Path>, adapter: Adapter) -> Result<Corpus> {
    let path = path.as_ref();
    match adapter {
        Adapter::Normalized => load_normalized(path),
        Adapter::Vrdu => load_vrdu(path),
        Adapter::Funsd => load_funsd(path),
    }
}

pub fn load_normalized(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<(usize, String)> = BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i, l)).map_err(|e| Error::io(path, e)))
        .collect::<Result<_>>()?;
    parse_normalized_lines(&lines)
}

pub fn parse_normalized(text: &str) -> Result<Corpus> {
    let lines: Vec<(usize, String)> = text.lines().map(str::to_string).enumerate().collect();
    parse_normalized_lines(&lines)
}

fn parse_normalized_lines(lines: &[(usize, String)]) -> Result<Corpus> {
    let documents = lines
        .par_iter()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<Document>(line).map_err(|e| {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string))
                    .unwrap_or_else(|| format!("<line {}>", i + 1));
                Error::parse(id, format!("line {}", i + 1), e.to_string())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(documents)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub doc_id: String,
    /// Text-only summary of the document; filled by the prompting module.
    pub condensed_text: String,
    pub entities: EntityMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub strategy_level: String,
    pub examples: Vec<Example>,
}

impl ExampleSet {
    pub fn empty(strategy_level: impl Into<String>) -> Self {
        ExampleSet {
            strategy_level: strategy_level.into(),
            examples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Take the first `count` training documents, in order, as prompt examples.
pub fn select_examples(training_docs: &[Document], count: usize, strategy_level: &str) -> Result<ExampleSet> {
    if !EXAMPLE_COUNTS.contains(&count) {
        return Err(Error::usage(format!(
            "example count {count} not in {EXAMPLE_COUNTS:?}"
        )));
    }
    if training_docs.len() < count {
        return Err(Error::Capacity {
            needed: count,
            available: training_docs.len(),
        });
    }
    Ok(ExampleSet {
        strategy_level: strategy_level.to_string(),
        examples: training_docs[..count]
            .iter()
            .map(|d| Example {
                doc_id: d.id.clone(),
                condensed_text: String::new(),
                entities: d.ground_truth.clone(),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str) -> Document {
        let mut gt = EntityMap::new();
        gt.insert("registration_num".into(), vec![format!("{}", id.len())]);
        Document {
            id: id.into(),
            pages: vec![Page {
                width: 100.0,
                height: 100.0,
                words: vec![Word::new("FARA", [0.0, 0.0, 100.0, 100.0])],
            }],
            ground_truth: gt,
        }
    }

    #[test]
    fn normalized_roundtrip_preserves_ids() {
        let corpus = Corpus::new(vec![doc("a"), doc("bb")]).unwrap();
        let back = parse_normalized(&corpus.to_jsonl()).unwrap();
        assert_eq!(back.documents, corpus.documents);
        assert_eq!(back.documents.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["a", "bb"]);
    }

    #[test]
    fn singleton_values_become_lists() {
        let line = r#"{"id":"x","pages":[{"width":10,"height":10,"words":[]}],"ground_truth":{"file_date":"1982-10-31"}}"#;
        let corpus = parse_normalized(line).unwrap();
        assert_eq!(corpus.documents[0].ground_truth["file_date"], vec!["1982-10-31"]);
    }

    #[test]
    fn inverted_box_names_word_index() {
        let line = r#"{"id":"bad","pages":[{"width":10,"height":10,"words":[
            {"text":"ok","box":[0,0,1,1]},{"text":"oops","box":[5,0,2,1]}]}]}"#
            .replace('\n', "");
        let err = parse_normalized(&line).unwrap_err();
        match err {
            Error::Parse { doc_id, field, message } => {
                assert_eq!(doc_id, "bad");
                assert_eq!(field, "pages[0].words[1].box");
                assert!(message.contains("word index 1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_record_names_document() {
        let line = r#"{"id":"d7","pages":"not a list"}"#;
        match parse_normalized(line).unwrap_err() {
            Error::Parse { doc_id, .. } => assert_eq!(doc_id, "d7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Corpus::new(vec![doc("a"), doc("a")]).is_err());
    }

    #[test]
    fn unknown_adapter_is_usage_error() {
        assert!(matches!("cord".parse::<Adapter>(), Err(Error::Usage(_))));
    }

    #[test]
    fn missing_file_is_io_error_with_path() {
        let err = load_corpus("/no/such/corpus.jsonl", Adapter::Normalized).unwrap_err();
        assert!(matches!(err, Error::Io { ref path, .. } if path.ends_with("corpus.jsonl")));
    }

    #[test]
    fn ground_truth_outside_schema_detected() {
        let corpus = Corpus::new(vec![doc("a")]).unwrap();
        assert!(corpus.validate_against(&Schema::vrdu_registration()).is_ok());
        let other = Schema::from_entries([("file_date", r"\d{4}-\d{2}-\d{2}")]).unwrap();
        assert!(corpus.validate_against(&other).is_err());
    }

    #[test]
    fn example_selection() {
        let docs: Vec<Document> = ["d1", "d2", "d3", "d4", "d5"].iter().map(|i| doc(i)).collect();
        let one = select_examples(&docs, 1, "STL").unwrap();
        assert_eq!(one.examples.len(), 1);
        assert_eq!(one.examples[0].doc_id, "d1");
        assert_eq!(one.examples[0].entities, docs[0].ground_truth);
        assert!(select_examples(&docs, 0, "STL").unwrap().is_empty());
        let five = select_examples(&docs, 5, "STL").unwrap();
        let three = select_examples(&docs, 3, "STL").unwrap();
        assert_eq!(&five.examples[..3], &three.examples[..]);
        assert!(matches!(select_examples(&docs[..2], 3, "STL"), Err(Error::Capacity { needed: 3, available: 2 })));
        assert!(matches!(select_examples(&docs, 2, "STL"), Err(Error::Usage(_))));
    }
}
