//! Greedy, word-aligned splitting of a rendered document under a token budget.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rendering::{serialize_segments, LayoutText, Representation, Segment};

/// Cost charged for one `[x0,y0,x1,y1]` coordinate tag.
pub const COORDINATE_TAG_COST: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkSize {
    Small,
    Medium,
    Max,
}

impl ChunkSize {
    pub const ALL: [ChunkSize; 3] = [ChunkSize::Small, ChunkSize::Medium, ChunkSize::Max];

    pub fn token_limit(self) -> usize {
        match self {
            ChunkSize::Small => 1024,
            ChunkSize::Medium => 2048,
            ChunkSize::Max => 4096,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ChunkSize::Small => "small",
            ChunkSize::Medium => "medium",
            ChunkSize::Max => "max",
        }
    }
}

impl fmt::Display for ChunkSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ChunkSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(ChunkSize::Small),
            "medium" => Ok(ChunkSize::Medium),
            "max" => Ok(ChunkSize::Max),
            other => Err(Error::usage(format!("unknown chunk size `{other}`"))),
        }
    }
}

/// A named token-cost function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// `max(1, ceil(chars / 4))` per whitespace word, plus a flat cost per coordinate tag.
    #[default]
    CharQuarter,
    /// One token per whitespace word, plus a flat cost per coordinate tag.
    Whitespace,
}

impl Tokenizer {
    pub fn by_name(name: &str) -> Result<Tokenizer> {
        match name {
            "char_quarter" | "default" => Ok(Tokenizer::CharQuarter),
            "whitespace" => Ok(Tokenizer::Whitespace),
            other => Err(Error::usage(format!("unknown tokenizer `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tokenizer::CharQuarter => "char_quarter",
            Tokenizer::Whitespace => "whitespace",
        }
    }

    pub fn cost(self, text: &str) -> usize {
        text.split_whitespace()
            .map(|w| {
                if is_coordinate_tag(w) {
                    COORDINATE_TAG_COST
                } else {
                    match self {
                        Tokenizer::CharQuarter => w.chars().count().div_ceil(4).max(1),
                        Tokenizer::Whitespace => 1,
                    }
                }
            })
            .sum()
    }
}

fn is_coordinate_tag(word: &str) -> bool {
    static TAG: OnceLock<Regex> = OnceLock::new();
    TAG.get_or_init(|| Regex::new(r"^\[\d+,\d+,\d+,\d+\]$").expect("valid regex"))
        .is_match(word)
}

/// Token cost of `text` under the named tokenizer.
pub fn token_cost(text: &str, tokenizer: &str) -> Result<usize> {
    Ok(Tokenizer::by_name(tokenizer)?.cost(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPolicy {
    pub size: ChunkSize,
    pub tokenizer: Tokenizer,
    token_limit: usize,
}

impl ChunkPolicy {
    pub fn new(size: ChunkSize, tokenizer: Tokenizer) -> Self {
        ChunkPolicy {
            size,
            tokenizer,
            token_limit: size.token_limit(),
        }
    }

    pub fn token_limit(&self) -> usize {
        self.token_limit
    }

    /// A policy with an arbitrary budget, for exercising the fill rule on small inputs.
    #[doc(hidden)]
    pub fn with_limit(size: ChunkSize, tokenizer: Tokenizer, token_limit: usize) -> Self {
        ChunkPolicy {
            size,
            tokenizer,
            token_limit,
        }
    }
}

impl From<ChunkSize> for ChunkPolicy {
    fn from(size: ChunkSize) -> Self {
        ChunkPolicy::new(size, Tokenizer::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    pub representation: Representation,
    pub segments: Vec<Segment>,
    pub token_cost: usize,
    /// Set when the chunk is a single word that alone exceeds the budget.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oversized: bool,
}

impl Chunk {
    pub fn serialize(&self) -> String {
        serialize_segments(&self.segments, self.representation)
    }

    pub fn word_count(&self) -> usize {
        self.segments.iter().map(|s| s.words.len()).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().flat_map(|s| s.words.iter().map(|w| w.text.as_str()))
    }
}

struct Builder<'a> {
    lt: &'a LayoutText,
    policy: &'a ChunkPolicy,
    chunks: Vec<Chunk>,
    closed: Vec<Segment>,
    closed_cost: usize,
}

impl Builder<'_> {
    fn segment_cost(&self, seg: &Segment) -> usize {
        self.policy.tokenizer.cost(&seg.render(self.lt.representation))
    }

    fn flush(&mut self, oversized: bool) {
        if self.closed.is_empty() {
            return;
        }
        let segments = std::mem::take(&mut self.closed);
        let chunk = Chunk {
            doc_id: self.lt.doc_id.clone(),
            index: self.chunks.len(),
            representation: self.lt.representation,
            token_cost: self.policy.tokenizer.cost(&serialize_segments(&segments, self.lt.representation)),
            segments,
            oversized,
        };
        if oversized {
            log::warn!(
                "document {} chunk {}: single word costs {} tokens, over the {} budget",
                chunk.doc_id,
                chunk.index,
                chunk.token_cost,
                self.policy.token_limit()
            );
        }
        self.chunks.push(chunk);
        self.closed_cost = 0;
    }
}

/// Split `lt` into chunks by accumulating whole words while the chunk's cost
/// stays within the policy's budget. A word that alone exceeds the budget is
/// emitted as its own chunk and flagged.
pub fn chunk_document(lt: &LayoutText, policy: &ChunkPolicy) -> Vec<Chunk> {
    let limit = policy.token_limit();
    let mut b = Builder {
        lt,
        policy,
        chunks: Vec::new(),
        closed: Vec::new(),
        closed_cost: 0,
    };

    for seg in &lt.segments {
        let n = seg.words.len();
        let mut start = 0;
        while start < n {
            // Largest end with [start, end) inside the budget. A part's cost only
            // grows as words are added, so the greedy word-by-word cut is found by
            // bisection.
            let part = |e: usize| b.segment_cost(&seg.slice(start, e));
            let whole = part(n);
            let (end, part_cost) = if b.closed_cost + whole <= limit {
                (n, whole)
            } else {
                let (mut lo, mut hi, mut lo_cost) = (start, n, 0);
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    let cost = part(mid);
                    if b.closed_cost + cost <= limit {
                        (lo, lo_cost) = (mid, cost);
                    } else {
                        hi = mid;
                    }
                }
                (lo, lo_cost)
            };
            if end == start {
                if b.closed.is_empty() {
                    // a single word over budget on an empty chunk
                    b.closed.push(seg.slice(start, start + 1));
                    b.flush(true);
                    start += 1;
                } else {
                    b.flush(false);
                }
                continue;
            }
            b.closed.push(seg.slice(start, end));
            b.closed_cost += part_cost;
            start = end;
            if start < n {
                b.flush(false);
            }
        }
    }
    b.flush(false);
    b.chunks
}
