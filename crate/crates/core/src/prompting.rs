//! Few-shot and chain-of-thought prompt assembly.
//!
//! Prompt layout (the reasoning blocks appear only for chain-of-thought, the
//! examples section only when examples are requested):
//!
//! ```text
//! ### Examples ###
//! (<Document>)
//! {condensed example text}
//! (</Document>)
//! (<Task>)
//! {task instruction}
//! {schema JSON}
//! (</Task>)
//! (<Reasoning>)
//! {example reasoning}
//! (</Reasoning>)
//! (<Extraction>)
//! {example entities JSON}
//! (</Extraction>)
//! ### New Documents ###
//! (<Document>)
//! {chunk text with coordinates}
//! (</Document>)
//! (<Task>)
//! {task instruction}
//! {schema JSON}
//! (</Task>)
//! (<Reasoning>)
//! {reasoning instruction}
//! (</Reasoning>)
//! (<Extraction>)
//! ```

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::Completer;
use crate::chunker::Chunk;
use crate::corpus::{Document, EntityMap, ExampleSet, Schema, EXAMPLE_COUNTS};
use crate::error::{Error, Result};
use crate::rendering::{render_layout_text, DEFAULT_GRID};

pub const EXAMPLES_HEADER: &str = "### Examples ###";
pub const NEW_DOCUMENTS_HEADER: &str = "### New Documents ###";

const DOCUMENT_OPEN: &str = "(<Document>)";
const DOCUMENT_CLOSE: &str = "(</Document>)";

/// Default extraction instruction. Harness-chosen wording.
pub const DEFAULT_TASK_INSTRUCTION: &str = "Extract the values of the attributes defined in the schema below from the document. \
Each line of the document may end with its bounding box [x0,y0,x1,y1] on a 0-1000 grid. \
Answer with a single JSON object whose keys are the schema attributes; use a list when an attribute has several values \
and omit attributes that do not occur in the document.";

/// Default reasoning instruction for the document under extraction. Harness-chosen wording.
pub const DEFAULT_REASONING: &str = "Think step by step: find where each schema attribute is stated in the document, \
check the value against the attribute's format, then write the extraction.";

pub const DEFAULT_CONDENSE_INSTRUCTION: &str = "Summarize the document below in a few sentences for use as an extraction example. \
Keep every value listed under Entities exactly as written.";

pub const DEFAULT_MARKDOWN_INSTRUCTION: &str = "Convert the OCR lines below into Markdown. Use headings, paragraphs and pipe tables \
where the layout suggests them, keep every word of the text, and drop the bounding boxes.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    FewShot,
    Cot,
}

impl PromptKind {
    pub const ALL: [PromptKind; 2] = [PromptKind::FewShot, PromptKind::Cot];

    pub fn label(self) -> &'static str {
        match self {
            PromptKind::FewShot => "few_shot",
            PromptKind::Cot => "cot",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "few_shot" | "fewshot" => Ok(PromptKind::FewShot),
            "cot" => Ok(PromptKind::Cot),
            other => Err(Error::usage(format!("unknown prompt type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptStrategy {
    pub kind: PromptKind,
    pub example_count: usize,
}

impl PromptStrategy {
    pub fn new(kind: PromptKind, example_count: usize) -> Result<Self> {
        if !EXAMPLE_COUNTS.contains(&example_count) {
            return Err(Error::usage(format!("example count {example_count} not in {EXAMPLE_COUNTS:?}")));
        }
        Ok(PromptStrategy { kind, example_count })
    }
}

impl Default for PromptStrategy {
    fn default() -> Self {
        PromptStrategy {
            kind: PromptKind::FewShot,
            example_count: 0,
        }
    }
}

/// What a prompt asks the model to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPurpose {
    Extraction,
    Condense,
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub doc_id: String,
    pub chunk_index: usize,
    pub purpose: PromptPurpose,
    pub text: String,
    pub strategy: PromptStrategy,
    pub schema_digest: String,
}

/// Editable instruction texts. They are part of every prompt, and so of every cache key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub task_instruction: String,
    pub reasoning: String,
    pub condense_instruction: String,
    pub markdown_instruction: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            task_instruction: DEFAULT_TASK_INSTRUCTION.into(),
            reasoning: DEFAULT_REASONING.into(),
            condense_instruction: DEFAULT_CONDENSE_INSTRUCTION.into(),
            markdown_instruction: DEFAULT_MARKDOWN_INSTRUCTION.into(),
        }
    }
}

/// JSON object of entity values in schema order; single values stay scalars
/// and absent attributes are empty strings.
pub fn extraction_json(schema: &Schema, entities: &EntityMap) -> String {
    let mut map = serde_json::Map::new();
    for name in schema.names() {
        let value = match entities.get(name).map(Vec::as_slice) {
            None | Some([]) => serde_json::Value::String(String::new()),
            Some([one]) => serde_json::Value::String(one.clone()),
            Some(many) => many.iter().cloned().map(serde_json::Value::String).collect(),
        };
        map.insert(name.to_string(), value);
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("json serializes")
}

/// Worked reasoning for an example: where each attribute's value comes from.
fn example_reasoning(schema: &Schema, entities: &EntityMap) -> String {
    schema
        .names()
        .map(|name| match entities.get(name).filter(|v| !v.is_empty()) {
            Some(values) => {
                let quoted: Vec<String> = values.iter().map(|v| format!("\"{v}\"")).collect();
                format!("- {name}: the document states {}.", quoted.join(" and "))
            }
            None => format!("- {name}: not stated in the document."),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn push_block(out: &mut String, tag: &str, body: &str) {
    out.push_str(&format!("(<{tag}>)\n{body}\n(</{tag}>)\n"));
}

fn reject_marker(text: &str, what: &str) -> Result<()> {
    if text.contains(NEW_DOCUMENTS_HEADER) {
        return Err(Error::usage(format!("{what} contains the reserved marker `{NEW_DOCUMENTS_HEADER}`")));
    }
    Ok(())
}

pub fn build_prompt(
    chunk: &Chunk,
    schema: &Schema,
    strategy: PromptStrategy,
    examples: &ExampleSet,
    templates: &PromptTemplates,
) -> Result<Prompt> {
    if examples.len() != strategy.example_count {
        return Err(Error::usage(format!(
            "strategy wants {} examples, got {}",
            strategy.example_count,
            examples.len()
        )));
    }
    let cot = strategy.kind == PromptKind::Cot;
    let schema_repr = schema.representation();
    let task = format!("{}\n{}", templates.task_instruction, schema_repr);

    let mut text = String::new();
    if !examples.is_empty() {
        text.push_str(EXAMPLES_HEADER);
        text.push('\n');
        for ex in &examples.examples {
            reject_marker(&ex.condensed_text, "example text")?;
            push_block(&mut text, "Document", &ex.condensed_text);
            push_block(&mut text, "Task", &task);
            if cot {
                push_block(&mut text, "Reasoning", &example_reasoning(schema, &ex.entities));
            }
            push_block(&mut text, "Extraction", &extraction_json(schema, &ex.entities));
        }
    }
    let body = chunk.serialize();
    reject_marker(&body, "document chunk")?;
    text.push_str(NEW_DOCUMENTS_HEADER);
    text.push('\n');
    push_block(&mut text, "Document", &body);
    push_block(&mut text, "Task", &task);
    if cot {
        push_block(&mut text, "Reasoning", &templates.reasoning);
    }
    text.push_str("(<Extraction>)");

    Ok(Prompt {
        doc_id: chunk.doc_id.clone(),
        chunk_index: chunk.index,
        purpose: PromptPurpose::Extraction,
        text,
        strategy,
        schema_digest: schema.digest(),
    })
}

/// The document text of the new-document section of an extraction prompt.
pub fn new_document_text(prompt_text: &str) -> Option<&str> {
    let (_, tail) = prompt_text.split_once(NEW_DOCUMENTS_HEADER)?;
    let start = tail.find(DOCUMENT_OPEN)? + DOCUMENT_OPEN.len();
    let end = tail.find(DOCUMENT_CLOSE)?;
    tail.get(start..end).map(|s| s.strip_prefix('\n').unwrap_or(s).strip_suffix('\n').unwrap_or(s))
}

pub fn markdown_prompt(doc: &Document) -> Result<Prompt> {
    markdown_prompt_with(doc, &PromptTemplates::default())
}

pub fn markdown_prompt_with(doc: &Document, templates: &PromptTemplates) -> Result<Prompt> {
    let ocr = render_layout_text(doc, DEFAULT_GRID)?.serialize();
    let mut text = format!("{}\n", templates.markdown_instruction);
    push_block(&mut text, "Document", &ocr);
    text.push_str("(<Markdown>)");
    Ok(Prompt {
        doc_id: doc.id.clone(),
        chunk_index: 0,
        purpose: PromptPurpose::Markdown,
        text,
        strategy: PromptStrategy::default(),
        schema_digest: String::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedExample {
    pub text: String,
    /// The model never produced every entity value; missing ones were appended verbatim.
    pub degraded: bool,
}

/// Values from `entities` that do not occur verbatim in `text`.
fn missing_values<'a>(text: &str, entities: &'a EntityMap) -> Vec<&'a str> {
    let mut missing: Vec<&str> = Vec::new();
    for v in entities.values().flatten() {
        if !v.is_empty() && !text.contains(v.as_str()) && !missing.contains(&v.as_str()) {
            missing.push(v);
        }
    }
    missing
}

/// Builds model-written, text-only summaries of example documents, cached per
/// (document, schema).
#[derive(Debug)]
pub struct Condenser {
    pub templates: PromptTemplates,
    pub retry_budget: usize,
    cache: Mutex<HashMap<(String, String), CondensedExample>>,
}

impl Default for Condenser {
    fn default() -> Self {
        Condenser::new(PromptTemplates::default(), 2)
    }
}

impl Condenser {
    pub fn new(templates: PromptTemplates, retry_budget: usize) -> Self {
        Condenser {
            templates,
            retry_budget,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn condense_prompt(&self, doc: &Document, gt: &EntityMap, schema: &Schema, missing: &[&str]) -> Prompt {
        let mut text = format!("{}\n", self.templates.condense_instruction);
        push_block(&mut text, "Document", &doc.plain_text());
        push_block(&mut text, "Entities", &extraction_json(schema, gt));
        if !missing.is_empty() {
            text.push_str(&format!(
                "The summary must also contain these values exactly as written: {}\n",
                missing.join("; ")
            ));
        }
        text.push_str("(<Summary>)");
        Prompt {
            doc_id: doc.id.clone(),
            chunk_index: 0,
            purpose: PromptPurpose::Condense,
            text,
            strategy: PromptStrategy::default(),
            schema_digest: schema.digest(),
        }
    }

    pub fn condense(&self, doc: &Document, gt: &EntityMap, schema: &Schema, backend: &dyn Completer) -> Result<CondensedExample> {
        let key = (doc.id.clone(), schema.digest());
        if let Some(hit) = self.cache.lock().expect("condense cache").get(&key) {
            return Ok(hit.clone());
        }
        let mut missing: Vec<&str> = Vec::new();
        let mut text = String::new();
        for _ in 0..=self.retry_budget {
            let prompt = self.condense_prompt(doc, gt, schema, &missing);
            text = backend.complete(&prompt)?.text.trim().to_string();
            missing = missing_values(&text, gt);
            if missing.is_empty() {
                break;
            }
        }
        let degraded = !missing.is_empty();
        if degraded {
            log::warn!("condensed example {} is missing {} values; appending them", doc.id, missing.len());
            text.push('\n');
            text.push_str(&missing.join("\n"));
        }
        let out = CondensedExample { text, degraded };
        self.cache.lock().expect("condense cache").insert(key, out.clone());
        Ok(out)
    }

    /// Fill the condensed text of every example in the set.
    pub fn fill(&self, set: &mut ExampleSet, training: &[Document], schema: &Schema, backend: &dyn Completer) -> Result<()> {
        for ex in &mut set.examples {
            let doc = training
                .iter()
                .find(|d| d.id == ex.doc_id)
                .ok_or_else(|| Error::usage(format!("example document `{}` not in the training set", ex.doc_id)))?;
            ex.condensed_text = self.condense(doc, &ex.entities, schema, backend)?.text;
        }
        Ok(())
    }
}
