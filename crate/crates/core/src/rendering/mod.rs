//! Input representations handed to the model: OCR text tagged with quantized
//! layout coordinates, and a Markdown rendering.

mod lines;
mod markdown;

pub use lines::group_lines;
pub use markdown::{parse_markdown, render_markdown, MarkdownMode};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

/// Coordinate grid used when none is configured.
pub const DEFAULT_GRID: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl QuantBox {
    pub fn union(self, other: QuantBox) -> QuantBox {
        QuantBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

impl fmt::Display for QuantBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x0, self.y0, self.x1, self.y1)
    }
}

/// Map a page-unit rectangle onto the integer `0..=grid` lattice.
pub fn quantize_box(bbox: [f64; 4], page: (f64, f64), grid: u32) -> Result<QuantBox> {
    let (width, height) = page;
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(Error::Domain(format!("page must have positive area, got {width}x{height}")));
    }
    let g = f64::from(grid);
    // f64::round rounds half away from zero
    let q = |c: f64, extent: f64| ((c * g / extent).round().clamp(0.0, g)) as u32;
    let [x0, y0, x1, y1] = bbox;
    let (x0, x1) = (q(x0, width), q(x1, width));
    let (y0, y1) = (q(y0, height), q(y1, height));
    Ok(QuantBox {
        x0: x0.min(x1),
        y0: y0.min(y1),
        x1: x0.max(x1),
        y1: y0.max(y1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Ocr,
    Markdown,
}

/// Whether coordinate tags attach to whole lines or to single words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Line,
    Word,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentWord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<QuantBox>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "style")]
pub enum SegmentStyle {
    /// A visual OCR line, or a verbatim line of model-written Markdown.
    Line,
    Heading,
    Paragraph,
    /// Pipe-table row; `cells` holds the word count of each cell.
    TableRow { cells: Vec<usize>, header: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub words: Vec<SegmentWord>,
    #[serde(flatten)]
    pub style: SegmentStyle,
    /// Segments sharing a block number render without a blank line between them.
    pub block: usize,
}

impl Segment {
    pub fn text(&self) -> String {
        let words: Vec<&str> = self.words.iter().map(|w| w.text.as_str()).collect();
        words.join(" ")
    }

    /// Union of the member word boxes; `None` when any word lacks one.
    pub fn bbox(&self) -> Option<QuantBox> {
        let mut boxes = self.words.iter().map(|w| w.bbox);
        let first = boxes.next()??;
        boxes.try_fold(first, |acc, b| Some(acc.union(b?)))
    }

    pub fn render(&self, representation: Representation) -> String {
        match representation {
            Representation::Ocr => match self.bbox() {
                Some(b) => format!("{} {b}", self.text()),
                None => self.text(),
            },
            Representation::Markdown => match &self.style {
                SegmentStyle::Line | SegmentStyle::Paragraph => self.text(),
                SegmentStyle::Heading => format!("# {}", self.text()),
                SegmentStyle::TableRow { cells, header } => {
                    let mut out = String::from("|");
                    let mut at = 0;
                    for &n in cells {
                        let cell: Vec<&str> = self.words[at..at + n].iter().map(|w| w.text.as_str()).collect();
                        out.push(' ');
                        out.push_str(&cell.join(" ").replace('|', "\\|"));
                        out.push_str(" |");
                        at += n;
                    }
                    if *header {
                        out.push_str("\n|");
                        out.push_str(&" --- |".repeat(cells.len()));
                    }
                    out
                }
            },
        }
    }

    /// The sub-segment holding words `start..end`. A table row cut short
    /// loses its header rule.
    pub fn slice(&self, start: usize, end: usize) -> Segment {
        let style = match &self.style {
            SegmentStyle::TableRow { cells, header } => {
                let mut kept = Vec::new();
                let mut at = 0;
                for &n in cells {
                    let lo = at.max(start);
                    let hi = (at + n).min(end);
                    if hi > lo {
                        kept.push(hi - lo);
                    }
                    at += n;
                }
                SegmentStyle::TableRow {
                    cells: kept,
                    header: *header && start == 0 && end == self.words.len(),
                }
            }
            other => other.clone(),
        };
        Segment {
            words: self.words[start..end].to_vec(),
            style,
            block: self.block,
        }
    }
}

/// Join rendered segments: newline within a block, blank line between blocks.
pub fn serialize_segments(segments: &[Segment], representation: Representation) -> String {
    let mut out = String::new();
    for (i, seg) in segments.iter().enumerate() {
        if i > 0 {
            out.push_str(if segments[i - 1].block == seg.block { "\n" } else { "\n\n" });
        }
        out.push_str(&seg.render(representation));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutText {
    pub doc_id: String,
    pub representation: Representation,
    pub segments: Vec<Segment>,
}

impl LayoutText {
    pub fn serialize(&self) -> String {
        serialize_segments(&self.segments, self.representation)
    }

    pub fn words(&self) -> impl Iterator<Item = &SegmentWord> {
        self.segments.iter().flat_map(|s| s.words.iter())
    }

    pub fn word_count(&self) -> usize {
        self.segments.iter().map(|s| s.words.len()).sum()
    }
}

/// OCR words grouped into visual lines, each tagged with its quantized box.
pub fn render_layout_text(doc: &Document, grid: u32) -> Result<LayoutText> {
    render_layout_text_with(doc, grid, Granularity::Line)
}

pub fn render_layout_text_with(doc: &Document, grid: u32, granularity: Granularity) -> Result<LayoutText> {
    let mut segments = Vec::new();
    for page in &doc.pages {
        for line in group_lines(&page.words) {
            let words = line
                .iter()
                .map(|&i| {
                    let w = &page.words[i];
                    Ok(SegmentWord {
                        text: w.text.clone(),
                        bbox: Some(quantize_box(w.bbox, (page.width, page.height), grid)?),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            match granularity {
                Granularity::Line => segments.push(Segment {
                    words,
                    style: SegmentStyle::Line,
                    block: 0,
                }),
                Granularity::Word => segments.extend(words.into_iter().map(|w| Segment {
                    words: vec![w],
                    style: SegmentStyle::Line,
                    block: 0,
                })),
            }
        }
    }
    Ok(LayoutText {
        doc_id: doc.id.clone(),
        representation: Representation::Ocr,
        segments,
    })
}
