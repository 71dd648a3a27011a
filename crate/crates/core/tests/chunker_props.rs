use layie_core::chunker::{chunk_document, ChunkPolicy, ChunkSize, Tokenizer};
use layie_core::corpus::{Document, Page, Word};
use layie_core::rendering::{quantize_box, render_layout_text, render_markdown, MarkdownMode, DEFAULT_GRID};
use proptest::prelude::*;

fn document() -> impl Strategy<Value = Document> {
    let word = ("[A-Za-z0-9.,:#|-]{1,20}", 0.0f64..580.0, 0.0f64..770.0, 1.0f64..30.0, 1.0f64..20.0)
        .prop_map(|(t, x, y, w, h)| Word::new(t, [x, y, x + w, y + h]));
    prop::collection::vec(prop::collection::vec(word, 0..120), 1..3).prop_map(|pages| Document {
        id: "p".into(),
        pages: pages
            .into_iter()
            .map(|words| Page { width: 612.0, height: 792.0, words })
            .collect(),
        ground_truth: Default::default(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn partition_budget_monotonicity(doc in document(), budget in 6usize..200) {
        let tok = Tokenizer::default();
        for lt in [render_layout_text(&doc, DEFAULT_GRID).unwrap(), render_markdown(&doc, MarkdownMode::RuleBased, None).unwrap()] {
            let words: Vec<&str> = lt.words().map(|w| w.text.as_str()).collect();
            let small = chunk_document(&lt, &ChunkPolicy::with_limit(ChunkSize::Small, tok, budget));
            let large = chunk_document(&lt, &ChunkPolicy::with_limit(ChunkSize::Small, tok, budget * 2));
            for chunks in [&small, &large] {
                let got: Vec<&str> = chunks.iter().flat_map(|c| c.words()).collect();
                prop_assert_eq!(&got, &words);
                for c in chunks.iter() {
                    prop_assert_eq!(c.token_cost, tok.cost(&c.serialize()));
                }
            }
            for c in &small {
                prop_assert!(c.token_cost <= budget || (c.oversized && c.word_count() == 1));
            }
            prop_assert!(large.len() <= small.len());
            prop_assert_eq!(&small, &chunk_document(&lt, &ChunkPolicy::with_limit(ChunkSize::Small, tok, budget)));
        }
    }

    #[test]
    fn quantization_matches_rounding(x in 0.0f64..700.0, w in 1.0f64..700.0, grid in 10u32..2000) {
        let b = quantize_box([x, 0.0, x, 0.0], (w, 10.0), grid).unwrap();
        let want = ((x * grid as f64 / w).round() as u32).min(grid);
        prop_assert_eq!(b.x0, want);
        prop_assert!(b.x1 <= grid && b.y1 <= grid);
    }
}
