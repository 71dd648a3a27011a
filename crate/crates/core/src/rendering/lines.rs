use std::cmp::Ordering;

use crate::corpus::Word;

/// Minimum vertical overlap, as a fraction of the shorter box height, for two
/// words to share a line.
const LINE_OVERLAP: f64 = 0.5;

fn center_y(b: &[f64; 4]) -> f64 {
    (b[1] + b[3]) / 2.0
}

/// Two vertical extents belong on one line when they overlap by at least half
/// of the shorter one. Zero-height extents only need to touch.
pub(crate) fn same_line(a: (f64, f64), b: (f64, f64)) -> bool {
    let overlap = a.1.min(b.1) - a.0.max(b.0);
    let shorter = (a.1 - a.0).min(b.1 - b.0);
    if shorter <= 0.0 {
        overlap >= 0.0
    } else {
        overlap >= LINE_OVERLAP * shorter
    }
}

/// Group word indices into visual lines.
///
/// Words are swept in (y-center, x0) order; a word joins the open line when it
/// overlaps the line's first word, otherwise it opens a new line. Lines come out
/// ordered by (y-center, x0), and words within a line by x0.
pub fn group_lines(words: &[Word]) -> Vec<Vec<usize>> {
    let by_f64 = |a: f64, b: f64| a.partial_cmp(&b).unwrap_or(Ordering::Equal);
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.sort_by(|&a, &b| {
        let (wa, wb) = (&words[a].bbox, &words[b].bbox);
        by_f64(center_y(wa), center_y(wb))
            .then(by_f64(wa[0], wb[0]))
            .then(a.cmp(&b))
    });

    let mut lines: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let b = &words[i].bbox;
        let joins = lines.last().is_some_and(|line| {
            let anchor = &words[line[0]].bbox;
            same_line((anchor[1], anchor[3]), (b[1], b[3]))
        });
        if joins {
            lines.last_mut().expect("open line").push(i);
        } else {
            lines.push(vec![i]);
        }
    }

    for line in &mut lines {
        line.sort_by(|&a, &b| by_f64(words[a].bbox[0], words[b].bbox[0]).then(a.cmp(&b)));
    }
    let extent = |line: &[usize]| {
        let top = line.iter().map(|&i| words[i].bbox[1]).fold(f64::INFINITY, f64::min);
        let bottom = line.iter().map(|&i| words[i].bbox[3]).fold(f64::NEG_INFINITY, f64::max);
        ((top + bottom) / 2.0, words[line[0]].bbox[0])
    };
    lines.sort_by(|a, b| {
        let (ya, xa) = extent(a);
        let (yb, xb) = extent(b);
        by_f64(ya, yb).then(by_f64(xa, xb))
    });
    lines
}
