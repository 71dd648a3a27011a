use serde::{Deserialize, Serialize};

use super::lines::group_lines;
use super::{LayoutText, Representation, Segment, SegmentStyle, SegmentWord};
use crate::backend::Completer;
use crate::corpus::{Document, Word};
use crate::error::{Error, Result};
use crate::prompting::markdown_prompt;

/// Narrowest empty vertical band, as a fraction of page width, read as a column gutter.
const MIN_GUTTER: f64 = 0.04;
const MIN_COLUMN_WORDS_PER_LINE: f64 = 2.0;
/// Horizontal gap, in median word heights, that separates table cells.
const CELL_GAP: f64 = 2.0;
/// Vertical gap, in median word heights, that ends a paragraph.
const PARAGRAPH_GAP: f64 = 0.8;
/// Height ratio over the page median that marks a heading line.
const HEADING_SCALE: f64 = 1.3;
const HEADING_MAX_WORDS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkdownMode {
    #[default]
    RuleBased,
    LlmAssisted,
}

impl std::str::FromStr for MarkdownMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rule_based" | "rules" => Ok(MarkdownMode::RuleBased),
            "llm_assisted" | "llm" => Ok(MarkdownMode::LlmAssisted),
            other => Err(Error::usage(format!("unknown markdown mode `{other}`"))),
        }
    }
}

pub fn render_markdown(doc: &Document, mode: MarkdownMode, backend: Option<&dyn Completer>) -> Result<LayoutText> {
    match mode {
        MarkdownMode::RuleBased => Ok(rule_based(doc)),
        MarkdownMode::LlmAssisted => {
            let backend = backend.ok_or_else(|| Error::usage("LLM-assisted Markdown needs a completion backend"))?;
            let prompt = markdown_prompt(doc)?;
            let completion = backend.complete(&prompt)?;
            Ok(parse_markdown(&doc.id, &completion.text))
        }
    }
}

/// Read model-written Markdown back into segments, one per non-blank line.
/// Blank lines separate blocks; a surrounding code fence is dropped.
pub fn parse_markdown(doc_id: &str, text: &str) -> LayoutText {
    let mut body: Vec<&str> = text.lines().collect();
    if body.first().is_some_and(|l| l.trim_start().starts_with("```")) {
        body.remove(0);
        if let Some(end) = body.iter().rposition(|l| l.trim_start().starts_with("```")) {
            body.truncate(end);
        }
    }
    let mut segments = Vec::new();
    let mut block = 0;
    let mut pending_break = false;
    for line in body {
        let words: Vec<SegmentWord> = line
            .split_whitespace()
            .map(|w| SegmentWord {
                text: w.to_string(),
                bbox: None,
            })
            .collect();
        if words.is_empty() {
            pending_break = true;
            continue;
        }
        if pending_break && !segments.is_empty() {
            block += 1;
        }
        pending_break = false;
        segments.push(Segment {
            words,
            style: SegmentStyle::Line,
            block,
        });
    }
    LayoutText {
        doc_id: doc_id.to_string(),
        representation: Representation::Markdown,
        segments,
    }
}

struct Line {
    words: Vec<usize>,
    top: f64,
    bottom: f64,
    height: f64,
    cells: Vec<usize>,
}

fn rule_based(doc: &Document) -> LayoutText {
    let mut segments = Vec::new();
    let mut block = 0;
    for page in &doc.pages {
        let all: Vec<usize> = (0..page.words.len()).collect();
        let med = median_height(&page.words, &all);
        for column in split_columns(&page.words, all, page.width * MIN_GUTTER) {
            emit_column(&page.words, &column, med, &mut block, &mut segments);
        }
    }
    LayoutText {
        doc_id: doc.id.clone(),
        representation: Representation::Markdown,
        segments,
    }
}

fn median_height(words: &[Word], idx: &[usize]) -> f64 {
    let mut heights: Vec<f64> = idx.iter().map(|&i| words[i].bbox[3] - words[i].bbox[1]).collect();
    if heights.is_empty() {
        return 0.0;
    }
    heights.sort_by(|a, b| a.total_cmp(b));
    heights[heights.len() / 2]
}

/// Split words at the widest empty vertical band, recursively, when both sides
/// hold at least two lines. Columns come out left to right.
fn split_columns(words: &[Word], idx: Vec<usize>, min_gutter: f64) -> Vec<Vec<usize>> {
    if idx.len() < 4 {
        return vec![idx];
    }
    let mut spans: Vec<(f64, f64)> = idx.iter().map(|&i| (words[i].bbox[0], words[i].bbox[2])).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    let mut reach = spans[0].1;
    for &(start, end) in &spans[1..] {
        if start > reach {
            let gap = start - reach;
            if gap >= min_gutter && best.is_none_or(|(s, e)| gap > e - s) {
                best = Some((reach, start));
            }
        }
        reach = reach.max(end);
    }
    let Some((cut, _)) = best else {
        return vec![idx];
    };
    let (left, right): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| words[i].bbox[2] <= cut);
    // prose columns: several lines, several words per line; short aligned cells stay a table
    let is_column = |side: &[usize]| {
        let sub: Vec<Word> = side.iter().map(|&i| words[i].clone()).collect();
        let lines = group_lines(&sub).len();
        lines >= 2 && side.len() as f64 / lines as f64 >= MIN_COLUMN_WORDS_PER_LINE
    };
    if !is_column(&left) || !is_column(&right) {
        let mut all = left;
        all.extend(right);
        all.sort_unstable();
        return vec![all];
    }
    let mut out = split_columns(words, left, min_gutter);
    out.extend(split_columns(words, right, min_gutter));
    out
}

fn emit_column(words: &[Word], column: &[usize], med: f64, block: &mut usize, out: &mut Vec<Segment>) {
    let sub: Vec<Word> = column.iter().map(|&i| words[i].clone()).collect();
    let lines: Vec<Line> = group_lines(&sub)
        .into_iter()
        .map(|line| {
            let ids: Vec<usize> = line.iter().map(|&j| column[j]).collect();
            let top = ids.iter().map(|&i| words[i].bbox[1]).fold(f64::INFINITY, f64::min);
            let bottom = ids.iter().map(|&i| words[i].bbox[3]).fold(f64::NEG_INFINITY, f64::max);
            let height = ids.iter().map(|&i| words[i].bbox[3] - words[i].bbox[1]).sum::<f64>() / ids.len() as f64;
            let mut cells = vec![1];
            for pair in ids.windows(2) {
                if words[pair[1]].bbox[0] - words[pair[0]].bbox[2] > CELL_GAP * med {
                    cells.push(1);
                } else {
                    *cells.last_mut().expect("non-empty") += 1;
                }
            }
            Line {
                words: ids,
                top,
                bottom,
                height,
                cells,
            }
        })
        .collect();

    // runs of consecutive lines that belong to one block
    let mut runs: Vec<Vec<&Line>> = Vec::new();
    for line in &lines {
        let starts_new = match runs.last().and_then(|r| r.last()) {
            None => true,
            Some(prev) => {
                let gap = line.top - prev.bottom;
                let tabular = |l: &Line| l.cells.len() >= 2;
                gap > PARAGRAPH_GAP * med
                    || tabular(prev) != tabular(line)
                    || (tabular(line) && prev.cells.len() != line.cells.len())
            }
        };
        if starts_new {
            runs.push(vec![line]);
        } else {
            runs.last_mut().expect("open run").push(line);
        }
    }

    let seg_words = |ids: &[usize]| -> Vec<SegmentWord> {
        ids.iter()
            .map(|&i| SegmentWord {
                text: words[i].text.clone(),
                bbox: None,
            })
            .collect()
    };
    for run in runs {
        let is_table = run.len() >= 2 && run[0].cells.len() >= 2;
        if !out.is_empty() {
            *block += 1;
        }
        if is_table {
            for (r, line) in run.iter().enumerate() {
                out.push(Segment {
                    words: seg_words(&line.words),
                    style: SegmentStyle::TableRow {
                        cells: line.cells.clone(),
                        header: r == 0,
                    },
                    block: *block,
                });
            }
            continue;
        }
        let ids: Vec<usize> = run.iter().flat_map(|l| l.words.iter().copied()).collect();
        let heading = run.len() == 1 && med > 0.0 && run[0].height >= HEADING_SCALE * med && ids.len() <= HEADING_MAX_WORDS;
        out.push(Segment {
            words: seg_words(&ids),
            style: if heading { SegmentStyle::Heading } else { SegmentStyle::Paragraph },
            block: *block,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityMap, Page};

    fn doc(words: Vec<Word>) -> Document {
        Document {
            id: "md".into(),
            pages: vec![Page {
                width: 1000.0,
                height: 1000.0,
                words,
            }],
            ground_truth: EntityMap::new(),
        }
    }

    fn word(t: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Word {
        Word::new(t, [x0, y0, x1, y1])
    }

    #[test]
    fn paragraph_keeps_words() {
        let d = doc(vec![
            word("The", 10.0, 10.0, 40.0, 20.0),
            word("registrant", 45.0, 10.0, 120.0, 20.0),
            word("agrees.", 10.0, 22.0, 70.0, 32.0),
        ]);
        let lt = render_markdown(&d, MarkdownMode::RuleBased, None).unwrap();
        assert_eq!(lt.serialize(), "The registrant agrees.");
        assert!(lt.segments.iter().all(|s| s.bbox().is_none()));
    }

    #[test]
    fn two_columns_read_left_then_right() {
        let d = doc(vec![
            word("alpha", 10.0, 10.0, 100.0, 20.0),
            word("one", 600.0, 10.0, 660.0, 20.0),
            word("beta", 110.0, 10.0, 200.0, 20.0),
            word("two", 670.0, 10.0, 720.0, 20.0),
            word("gamma", 10.0, 22.0, 100.0, 32.0),
            word("three", 600.0, 22.0, 680.0, 32.0),
            word("delta", 110.0, 22.0, 200.0, 32.0),
            word("four", 690.0, 22.0, 740.0, 32.0),
        ]);
        let lt = render_markdown(&d, MarkdownMode::RuleBased, None).unwrap();
        assert_eq!(lt.serialize(), "alpha beta gamma delta\n\none two three four");
    }

    #[test]
    fn aligned_rows_become_table() {
        let d = doc(vec![
            word("Name", 10.0, 10.0, 60.0, 20.0),
            word("Title", 400.0, 10.0, 450.0, 20.0),
            word("Akira", 10.0, 22.0, 60.0, 32.0),
            word("Director", 400.0, 22.0, 480.0, 32.0),
            word("below", 10.0, 60.0, 60.0, 70.0),
            word("the", 10.0, 72.0, 60.0, 82.0),
            word("table", 500.0, 72.0, 560.0, 82.0),
        ]);
        let lt = render_markdown(&d, MarkdownMode::RuleBased, None).unwrap();
        let text = lt.serialize();
        assert!(text.starts_with("| Name | Title |\n| --- | --- |\n| Akira | Director |"), "{text}");
    }

    #[test]
    fn tall_line_is_heading() {
        let d = doc(vec![
            word("AMENDMENT", 10.0, 10.0, 300.0, 40.0),
            word("body", 10.0, 80.0, 60.0, 90.0),
            word("text", 70.0, 80.0, 120.0, 90.0),
            word("here", 130.0, 80.0, 180.0, 90.0),
        ]);
        let lt = render_markdown(&d, MarkdownMode::RuleBased, None).unwrap();
        assert_eq!(lt.serialize(), "# AMENDMENT\n\nbody text here");
    }

    #[test]
    fn llm_mode_requires_backend() {
        let d = doc(vec![word("x", 0.0, 0.0, 1.0, 1.0)]);
        assert!(matches!(render_markdown(&d, MarkdownMode::LlmAssisted, None), Err(Error::Usage(_))));
    }

    #[test]
    fn parse_round_trips_normalized_markdown() {
        let md = "# Title\n\n| a | b |\n| --- | --- |\n\nlast line";
        assert_eq!(parse_markdown("d", md).serialize(), md);
        assert_eq!(parse_markdown("d", "```markdown\nhello\n```").serialize(), "hello");
    }
}
