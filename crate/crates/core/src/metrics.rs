//! Value matching and micro-averaged precision, recall and F1.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::EntityMap;
use crate::error::{Error, Result};
use crate::refine::{PredictionSet, Stage};

pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.8;

/// Length of the longest common subsequence of two char sequences.
///
/// Bit-parallel over the shorter sequence, 64 positions per word: each
/// column of the LCS table is encoded as a bit vector whose zero bits mark
/// increments, and one row update is `V = (V + (V & M)) | (V & !M)`.
pub fn lcs_len(a: &[char], b: &[char]) -> usize {
    let (pattern, text) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let m = pattern.len();
    if m == 0 {
        return 0;
    }
    let blocks = m.div_ceil(64);
    let mut masks: HashMap<char, Vec<u64>> = HashMap::new();
    for (i, &c) in pattern.iter().enumerate() {
        masks.entry(c).or_insert_with(|| vec![0; blocks])[i / 64] |= 1 << (i % 64);
    }
    let mut v = vec![u64::MAX; blocks];
    for c in text {
        let Some(mask) = masks.get(c) else { continue };
        let mut carry = false;
        for (vi, &mi) in v.iter_mut().zip(mask) {
            let u = *vi & mi;
            let (sum, c1) = vi.overflowing_add(u);
            let (sum, c2) = sum.overflowing_add(carry as u64);
            carry = c1 || c2;
            *vi = sum | (*vi & !mi);
        }
    }
    let tail = m % 64;
    let mut ones = 0usize;
    for (i, &vi) in v.iter().enumerate() {
        let word = if i + 1 == blocks && tail != 0 { vi & ((1u64 << tail) - 1) } else { vi };
        ones += word.count_ones() as usize;
    }
    m - ones
}

/// Normalized indel similarity: `2·LCS / (|a| + |b|)`, with two empty strings
/// scoring 1. Lengths count Unicode scalar values.
pub fn fuzzy_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * lcs_len(&a, &b) as f64 / total as f64
}

/// Lowercase, trim, and collapse internal whitespace.
pub fn normalize_value(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchTechnique {
    Exact,
    Substring,
    Fuzzy { threshold: f64 },
}

impl MatchTechnique {
    pub const ALL: [MatchTechnique; 3] = [
        MatchTechnique::Exact,
        MatchTechnique::Substring,
        MatchTechnique::Fuzzy {
            threshold: DEFAULT_FUZZY_THRESHOLD,
        },
    ];

    pub fn fuzzy(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::usage(format!("fuzzy threshold must lie in (0,1], got {threshold}")));
        }
        Ok(MatchTechnique::Fuzzy { threshold })
    }

    pub fn label(&self) -> String {
        match self {
            MatchTechnique::Exact => "exact".into(),
            MatchTechnique::Substring => "substring".into(),
            MatchTechnique::Fuzzy { threshold } if *threshold == DEFAULT_FUZZY_THRESHOLD => "fuzzy".into(),
            MatchTechnique::Fuzzy { threshold } => format!("fuzzy:{threshold}"),
        }
    }
}

impl fmt::Display for MatchTechnique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for MatchTechnique {
    type Err = Error;

    /// `exact`, `substring`, `fuzzy`, or `fuzzy:<threshold>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.split_once(':') {
            Some(("fuzzy", t)) => {
                let t: f64 = t.parse().map_err(|_| Error::usage(format!("bad fuzzy threshold `{t}`")))?;
                MatchTechnique::fuzzy(t)
            }
            None if s == "exact" => Ok(MatchTechnique::Exact),
            None if s == "substring" => Ok(MatchTechnique::Substring),
            None if s == "fuzzy" => Ok(MatchTechnique::Fuzzy {
                threshold: DEFAULT_FUZZY_THRESHOLD,
            }),
            _ => Err(Error::usage(format!("unknown match technique `{s}`"))),
        }
    }
}

/// Compare already-normalized strings. An empty ground truth matches nothing.
fn matches_normalized(pred: &str, gt: &str, tech: MatchTechnique) -> bool {
    if gt.is_empty() {
        return false;
    }
    match tech {
        MatchTechnique::Exact => pred == gt,
        MatchTechnique::Substring => pred.contains(gt),
        MatchTechnique::Fuzzy { threshold } => fuzzy_ratio(pred, gt) >= threshold,
    }
}

pub fn value_match(pred: &str, gt: &str, tech: MatchTechnique) -> bool {
    matches_normalized(&normalize_value(pred), &normalize_value(gt), tech)
}

/// How predicted values are paired with ground-truth values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// One-to-one, taking matching pairs in descending similarity.
    #[default]
    Greedy,
    /// Each prediction is judged against its most similar ground-truth value;
    /// a ground-truth value counts once however many predictions hit it.
    BestCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        *self = *self + o;
    }
}

impl Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> MatchCounts {
        iter.fold(MatchCounts::default(), Add::add)
    }
}

impl<'a> Sum<&'a MatchCounts> for MatchCounts {
    fn sum<I: Iterator<Item = &'a MatchCounts>>(iter: I) -> MatchCounts {
        iter.copied().sum()
    }
}

fn normalized_set<'a>(values: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<String> = values.into_iter().map(normalize_value).filter(|v| !v.is_empty()).collect();
    set.into_iter().collect()
}

fn score_attribute(preds: &[String], gts: &[String], tech: MatchTechnique, assignment: Assignment) -> MatchCounts {
    let (np, ng) = (preds.len() as u64, gts.len() as u64);
    match assignment {
        Assignment::Greedy => {
            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for (i, p) in preds.iter().enumerate() {
                for (j, g) in gts.iter().enumerate() {
                    if matches_normalized(p, g, tech) {
                        pairs.push((fuzzy_ratio(p, g), i, j));
                    }
                }
            }
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let (mut used_p, mut used_g) = (vec![false; preds.len()], vec![false; gts.len()]);
            let mut tp = 0;
            for (_, i, j) in pairs {
                if !used_p[i] && !used_g[j] {
                    used_p[i] = true;
                    used_g[j] = true;
                    tp += 1;
                }
            }
            MatchCounts { tp, fp: np - tp, fn_: ng - tp }
        }
        Assignment::BestCandidate => {
            let mut covered = vec![false; gts.len()];
            let mut correct = 0;
            for p in preds {
                let best = gts
                    .iter()
                    .enumerate()
                    .map(|(j, g)| (fuzzy_ratio(p, g), j))
                    .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
                if let Some((_, j)) = best {
                    if matches_normalized(p, &gts[j], tech) {
                        covered[j] = true;
                        correct += 1;
                    }
                }
            }
            let tp = covered.iter().filter(|&&c| c).count() as u64;
            MatchCounts {
                tp,
                fp: np - correct,
                fn_: ng - tp,
            }
        }
    }
}

/// Counts for one document, summed over every attribute present in either
/// the predictions or the ground truth. Values are normalized and deduplicated
/// per attribute first.
pub fn score_document(preds: &PredictionSet, gt: &EntityMap, tech: MatchTechnique) -> MatchCounts {
    score_document_with(preds, gt, tech, Assignment::Greedy)
}

pub fn score_document_with(
    preds: &PredictionSet,
    gt: &EntityMap,
    tech: MatchTechnique,
    assignment: Assignment,
) -> MatchCounts {
    let keys: BTreeSet<&str> = preds.entries.keys().map(String::as_str).chain(gt.keys().map(String::as_str)).collect();
    keys.into_iter()
        .map(|k| {
            let p = normalized_set(preds.values(k));
            let g = normalized_set(gt.get(k).into_iter().flatten().map(String::as_str));
            score_attribute(&p, &g, tech, assignment)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a denominator was zero and the metric was taken as 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub undefined: bool,
}

/// Micro-average over all counts.
pub fn aggregate<'a>(counts: impl IntoIterator<Item = &'a MatchCounts>) -> Prf {
    let total: MatchCounts = counts.into_iter().sum();
    let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let p = ratio(total.tp, total.tp + total.fp);
    let r = ratio(total.tp, total.tp + total.fn_);
    let (precision, recall) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
    let f1 = if precision + recall > 0.0 {
        Some(2.0 * precision * recall / (precision + recall))
    } else {
        None
    };
    Prf {
        precision,
        recall,
        f1: f1.unwrap_or(0.0),
        undefined: p.is_none() || r.is_none() || f1.is_none(),
    }
}

/// Error taxonomy for manual review of mismatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    OcrError,
    GtError,
    LlmHallucination,
    AdditionalInfo,
    WrongInfo,
    HumanError,
    IncompletePrediction,
}

/// Per-document score line; `error_category` is left for human annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub doc_id: String,
    pub technique: String,
    pub stage: Stage,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub error_category: Option<ErrorCategory>,
}

impl ScoreRecord {
    pub fn new(doc_id: &str, technique: MatchTechnique, stage: Stage, counts: MatchCounts) -> Self {
        ScoreRecord {
            doc_id: doc_id.to_string(),
            technique: technique.label(),
            stage,
            tp: counts.tp,
            fp: counts.fp,
            fn_: counts.fn_,
            error_category: None,
        }
    }
}

pub fn score_records_jsonl(records: &[ScoreRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}
