use indexmap::IndexSet;

use super::{AuditEntry, PredictionSet, Stage};
use crate::corpus::{Schema, ValueKind};

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september", "october", "november",
    "december",
];

fn month_number(word: &str) -> Option<u32> {
    let w = word.trim_end_matches('.');
    if w.len() < 3 {
        return None;
    }
    if w == "sept" {
        return Some(9);
    }
    MONTHS.iter().position(|m| m.starts_with(w) && (w.len() == 3 || *m == w)).map(|i| i as u32 + 1)
}

fn is_leap(y: u32) -> bool {
    (y.is_multiple_of(4) && !y.is_multiple_of(100)) || y.is_multiple_of(400)
}

fn days_in(y: u32, m: u32) -> u32 {
    match m {
        2 if is_leap(y) => 29,
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

fn ymd(y: u32, m: u32, d: u32) -> Option<String> {
    ((1..=12).contains(&m) && d >= 1 && d <= days_in(y, m) && (1000..=9999).contains(&y))
        .then(|| format!("{y:04}-{m:02}-{d:02}"))
}

fn year(token: &str) -> Option<u32> {
    let y: u32 = token.parse().ok()?;
    match token.len() {
        4 => Some(y),
        // two-digit years pivot at 30
        2 if y < 30 => Some(2000 + y),
        2 => Some(1900 + y),
        _ => None,
    }
}

fn day(token: &str) -> Option<u32> {
    let t = ["st", "nd", "rd", "th"].iter().find_map(|s| token.strip_suffix(s)).unwrap_or(token);
    (1..=2).contains(&t.len()).then(|| t.parse().ok()).flatten()
}

/// Numeric dates: `YYYY-MM-DD`, `YYYY/MM/DD`, `YYYY-MM`, `MM/DD/YYYY`, `MM-DD-YYYY`, `MM/DD/YY`.
fn numeric_date(s: &str) -> Option<String> {
    let parts: Vec<&str> = s.split(['-', '/', '.']).collect();
    if parts.iter().any(|p| p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit())) {
        return None;
    }
    let n = |p: &str| p.parse::<u32>().ok();
    match parts.as_slice() {
        [y, m, d] if y.len() == 4 => ymd(n(y)?, n(m)?, n(d)?),
        [y, m] if y.len() == 4 && m.len() <= 2 => ymd(n(y)?, n(m)?, 1),
        [m, d, y] if m.len() <= 2 && d.len() <= 2 => ymd(year(y)?, n(m)?, n(d)?),
        [y] if y.len() == 4 => ymd(n(y)?, 1, 1),
        _ => None,
    }
}

/// Month-name dates: `April 1992`, `October 31, 1982`, `31 October 1982`,
/// `31st of Oct. 1982`.
fn worded_date(s: &str) -> Option<String> {
    let cleaned = s.to_lowercase().replace(',', " ");
    let words: Vec<&str> = cleaned.split_whitespace().filter(|w| *w != "of" && *w != "the").collect();
    match words.as_slice() {
        [m, y] => ymd(year(y)?, month_number(m)?, 1),
        [a, b, y] => match (month_number(a), month_number(b)) {
            (Some(m), None) => ymd(year(y)?, m, day(b)?),
            (None, Some(m)) => ymd(year(y)?, m, day(a)?),
            _ => None,
        },
        _ => None,
    }
}

/// ISO `YYYY-MM-DD` for a recognized date, with a missing day or month read as 01.
/// Slash dates are month first.
pub fn parse_date(value: &str) -> Option<String> {
    let s = value.trim();
    numeric_date(s).or_else(|| worded_date(s))
}

/// Trim, fold whitespace runs and control characters to one space, and map
/// typographic quotes and dashes to ASCII.
pub fn clean_free_text(value: &str) -> String {
    let mapped: String = value
        .chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' => '\'',
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' => '"',
            '\u{2010}'..='\u{2015}' | '\u{2212}' => '-',
            c if c.is_control() => ' ',
            c => c,
        })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Digits only; `None` when there are none.
pub fn clean_numeric(value: &str) -> Option<String> {
    let digits: String = value.chars().filter(char::is_ascii_digit).collect();
    (!digits.is_empty()).then_some(digits)
}

/// Normalize each value by its attribute's kind. Values still failing the
/// attribute pattern are kept and flagged.
pub fn clean_values(preds: &PredictionSet, schema: &Schema) -> PredictionSet {
    let mut out = PredictionSet::new(&preds.doc_id, Stage::Cleaned);
    out.parse_failures = preds.parse_failures;
    out.audit = preds
        .audit
        .iter()
        .filter(|e| !matches!(e, AuditEntry::NonConformant { .. }))
        .cloned()
        .collect();
    for (key, values) in &preds.entries {
        let Some(attr) = schema.get(key) else {
            out.entries.insert(key.clone(), values.clone());
            continue;
        };
        let mut cleaned = IndexSet::new();
        for v in values {
            let text = clean_free_text(v);
            let c = match attr.kind {
                ValueKind::Date => parse_date(&text).unwrap_or(text),
                ValueKind::Numeric => clean_numeric(&text).unwrap_or(text),
                ValueKind::FreeText => text,
            };
            if c.is_empty() {
                continue;
            }
            if !attr.conforms(&c) && !cleaned.contains(&c) {
                out.audit.push(AuditEntry::NonConformant {
                    doc_id: preds.doc_id.clone(),
                    attribute: key.clone(),
                    value: c.clone(),
                });
            }
            cleaned.insert(c);
        }
        out.entries.insert(key.clone(), cleaned);
    }
    out
}
