//! Dataset-specific layouts mapped onto the normalized document model.
//!
//! VRDU records are JSONL lines shaped like
//! `{"filename", "ocr": {"text", "pages": [...]}, "annotations": [[entity, [[value, ...], ...]], ...]}`.
//! Pages carry `width`/`height` (or a `dimension` object) and `tokens`. A token gives its
//! text directly, through `start`/`end` offsets into `ocr.text`, or through a
//! `layout.textAnchor`; its box is `bbox` in page units or a `layout.boundingPoly`.
//!
//! FUNSD is a directory of per-form annotation files; question→answer links
//! become ground-truth pairs keyed by the question text.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use super::{Corpus, Document, EntityMap, Page, Schema, Word};
use crate::error::{Error, Result};

/// VRDU spellings of the foreign-principal slot, all mapped to the schema name.
const FOREIGN_PRINCIPAL_ALIASES: [&str; 3] =
    ["foreign_principal_name", "foreign_principle_name", "foreign_principal"];

pub fn load_vrdu(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut documents = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("<line {}>", i + 1), "record", e.to_string()))?;
        documents.push(vrdu_document(&record, i + 1)?);
    }
    Ok(Corpus::new(documents)?.with_schema(Schema::vrdu_registration()))
}

fn vrdu_document(record: &Value, line: usize) -> Result<Document> {
    let id = record
        .get("filename")
        .or_else(|| record.get("id"))
        .and_then(Value::as_str)
        .map(|f| Path::new(f).file_stem().and_then(|s| s.to_str()).unwrap_or(f).to_string())
        .ok_or_else(|| Error::parse(format!("<line {line}>"), "filename", "missing document filename"))?;
    let ocr = record
        .get("ocr")
        .ok_or_else(|| Error::parse(&id, "ocr", "missing OCR payload"))?;
    let full_text = ocr.get("text").and_then(Value::as_str).unwrap_or("");
    let pages_json = ocr
        .get("pages")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(&id, "ocr.pages", "expected a list of pages"))?;

    let mut pages = Vec::with_capacity(pages_json.len());
    for (p, page) in pages_json.iter().enumerate() {
        let dims = page.get("dimension").unwrap_or(page);
        let width = dims.get("width").and_then(Value::as_f64);
        let height = dims.get("height").and_then(Value::as_f64);
        let (Some(width), Some(height)) = (width, height) else {
            return Err(Error::parse(&id, format!("ocr.pages[{p}]"), "missing page width/height"));
        };
        let mut words = Vec::new();
        let tokens = page.get("tokens").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]);
        for (t, token) in tokens.iter().enumerate() {
            let field = format!("ocr.pages[{p}].tokens[{t}]");
            let text = token_text(token, full_text).ok_or_else(|| Error::parse(&id, &field, "token has no text"))?;
            let text = text.trim();
            if text.is_empty() {
                continue;
            }
            let bbox = token_box(token, width, height).ok_or_else(|| Error::parse(&id, &field, "token has no box"))?;
            words.push(Word::new(text, clamp_box(bbox, width, height)));
        }
        pages.push(Page { width, height, words });
    }

    let mut ground_truth = EntityMap::new();
    if let Some(annotations) = record.get("annotations").and_then(Value::as_array) {
        for (a, ann) in annotations.iter().enumerate() {
            let (name, mentions) = match ann {
                Value::Array(parts) if parts.len() >= 2 => (parts[0].as_str(), parts[1].as_array()),
                _ => (None, None),
            };
            let (Some(name), Some(mentions)) = (name, mentions) else {
                return Err(Error::parse(&id, format!("annotations[{a}]"), "expected [entity, [mentions]]"));
            };
            let name = if FOREIGN_PRINCIPAL_ALIASES.contains(&name) { "foreign_princ_name" } else { name };
            for mention in mentions {
                let value = match mention {
                    Value::String(s) => Some(s.as_str()),
                    Value::Array(parts) => parts.first().and_then(Value::as_str),
                    _ => None,
                };
                if let Some(value) = value.map(str::trim).filter(|v| !v.is_empty()) {
                    let values = ground_truth.entry(name.to_string()).or_default();
                    if !values.iter().any(|v| v == value) {
                        values.push(value.to_string());
                    }
                }
            }
        }
    }

    Ok(Document {
        id,
        pages,
        ground_truth,
    })
}

fn token_text<'a>(token: &'a Value, full_text: &'a str) -> Option<&'a str> {
    if let Some(text) = token.get("text").and_then(Value::as_str) {
        return Some(text);
    }
    let offsets = |v: &Value| -> Option<(usize, usize)> {
        let start = v.get("start").or_else(|| v.get("startIndex")).map(as_index).unwrap_or(Some(0))?;
        let end = v.get("end").or_else(|| v.get("endIndex")).and_then(as_index)?;
        Some((start, end))
    };
    let (start, end) = offsets(token).or_else(|| {
        token
            .pointer("/layout/textAnchor/textSegments/0")
            .and_then(offsets)
    })?;
    full_text.get(start..end)
}

/// Offsets may arrive as numbers or as decimal strings.
fn as_index(v: &Value) -> Option<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .or_else(|| v.as_str().and_then(|s| s.parse().ok()))
}

fn token_box(token: &Value, width: f64, height: f64) -> Option<[f64; 4]> {
    if let Some(b) = token.get("bbox").or_else(|| token.get("box")).and_then(Value::as_array) {
        let coords: Vec<f64> = b.iter().filter_map(Value::as_f64).collect();
        if coords.len() == 4 {
            return Some([coords[0], coords[1], coords[2], coords[3]]);
        }
    }
    let poly = token.pointer("/layout/boundingPoly")?;
    let (vertices, sx, sy) = match poly.get("normalizedVertices").and_then(Value::as_array) {
        Some(v) if !v.is_empty() => (v, width, height),
        _ => (poly.get("vertices").and_then(Value::as_array)?, 1.0, 1.0),
    };
    let xs: Vec<f64> = vertices.iter().map(|v| v.get("x").and_then(Value::as_f64).unwrap_or(0.0) * sx).collect();
    let ys: Vec<f64> = vertices.iter().map(|v| v.get("y").and_then(Value::as_f64).unwrap_or(0.0) * sy).collect();
    if xs.is_empty() {
        return None;
    }
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some([min(&xs), min(&ys), max(&xs), max(&ys)])
}

/// OCR boxes can jitter a pixel past the page edge.
fn clamp_box([x0, y0, x1, y1]: [f64; 4], width: f64, height: f64) -> [f64; 4] {
    let cx = |x: f64| x.clamp(0.0, width);
    let cy = |y: f64| y.clamp(0.0, height);
    let (x0, x1) = (cx(x0.min(x1)), cx(x0.max(x1)));
    let (y0, y1) = (cy(y0.min(y1)), cy(y0.max(y1)));
    [x0, y0, x1, y1]
}

#[derive(Deserialize)]
struct FunsdForm {
    form: Vec<FunsdEntity>,
}

#[derive(Deserialize)]
struct FunsdEntity {
    id: i64,
    #[serde(default)]
    text: String,
    #[serde(default)]
    label: String,
    #[serde(default)]
    words: Vec<FunsdWord>,
    #[serde(default)]
    linking: Vec<Vec<i64>>,
}

#[derive(Deserialize)]
struct FunsdWord {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

/// Load FUNSD annotations from a directory of `*.json` files or a single file.
///
/// FUNSD annotations carry no page size, so each page spans the extent of
/// its word boxes.
pub fn load_funsd(path: &Path) -> Result<Corpus> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut documents = Vec::with_capacity(files.len());
    for file in &files {
        let id = file.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
        let form: FunsdForm = serde_json::from_str(&text).map_err(|e| Error::parse(&id, "form", e.to_string()))?;
        documents.push(funsd_document(id, form));
    }
    let corpus = Corpus::new(documents)?;
    let schema = corpus.dynamic_schema().ok();
    Ok(Corpus { schema, ..corpus })
}

fn funsd_document(id: String, form: FunsdForm) -> Document {
    let mut words = Vec::new();
    let (mut width, mut height) = (1.0f64, 1.0f64);
    for entity in &form.form {
        for w in &entity.words {
            let text = w.text.trim();
            if text.is_empty() {
                continue;
            }
            let [x0, y0, x1, y1] = w.bbox;
            let bbox = [x0.min(x1).max(0.0), y0.min(y1).max(0.0), x0.max(x1).max(0.0), y0.max(y1).max(0.0)];
            width = width.max(bbox[2]);
            height = height.max(bbox[3]);
            words.push(Word::new(text, bbox));
        }
    }

    let by_id: BTreeMap<i64, &FunsdEntity> = form.form.iter().map(|e| (e.id, e)).collect();
    let clean = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut ground_truth = EntityMap::new();
    for entity in form.form.iter().filter(|e| e.label == "question") {
        for link in &entity.linking {
            let [from, to] = link[..] else { continue };
            let other = if from == entity.id { to } else { from };
            let Some(answer) = by_id.get(&other).filter(|a| a.label == "answer") else { continue };
            let (key, value) = (clean(&entity.text), clean(&answer.text));
            if key.is_empty() || value.is_empty() {
                continue;
            }
            let values = ground_truth.entry(key).or_default();
            if !values.contains(&value) {
                values.push(value);
            }
        }
    }

    Document {
        id,
        pages: vec![Page { width, height, words }],
        ground_truth,
    }
}
