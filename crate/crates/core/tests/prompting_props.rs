use layie_core::chunker::{chunk_document, ChunkPolicy, ChunkSize, Tokenizer};
use layie_core::corpus::{select_examples, Schema};
use layie_core::prompting::{
    build_prompt, new_document_text, PromptKind, PromptStrategy, PromptTemplates, EXAMPLES_HEADER, NEW_DOCUMENTS_HEADER,
};
use layie_core::rendering::{render_layout_text, DEFAULT_GRID};
use layie_core::synthetic::generate_split;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prompt_structure(seed in any::<u64>(), filler in 0usize..60, count_idx in 0usize..4, cot in any::<bool>(), budget in 40usize..400) {
        let split = generate_split(1, 5, seed, filler);
        let schema = Schema::vrdu_registration();
        let count = [0, 1, 3, 5][count_idx];
        let mut examples = select_examples(&split.training.documents, count, "stl").unwrap();
        for ex in &mut examples.examples {
            ex.condensed_text = format!("Summary of {}.", ex.doc_id);
        }
        let kind = if cot { PromptKind::Cot } else { PromptKind::FewShot };
        let strategy = PromptStrategy::new(kind, count).unwrap();
        let lt = render_layout_text(&split.test.documents[0], DEFAULT_GRID).unwrap();
        let chunks = chunk_document(&lt, &ChunkPolicy::with_limit(ChunkSize::Small, Tokenizer::default(), budget));
        for chunk in &chunks {
            let p = build_prompt(chunk, &schema, strategy, &examples, &PromptTemplates::default()).unwrap();
            prop_assert!(p.text.ends_with("(<Extraction>)"));
            prop_assert_eq!(p.text.matches(NEW_DOCUMENTS_HEADER).count(), 1);
            prop_assert_eq!(p.text.contains(EXAMPLES_HEADER), count > 0);
            prop_assert_eq!(p.text.matches("(<Document>)").count(), count + 1);
            prop_assert_eq!(p.text.matches("(<Reasoning>)").count(), if cot { count + 1 } else { 0 });
            prop_assert_eq!(p.text.matches("(<Extraction>)").count(), count + 1);
            let body = chunk.serialize();
            prop_assert_eq!(new_document_text(&p.text), Some(body.as_str()));
            prop_assert_eq!(p.chunk_index, chunk.index);
            // every attribute is named in the task
            for name in schema.names() {
                prop_assert!(p.text.contains(name));
            }
        }
    }
}

#[test]
fn example_count_mismatch_is_usage_error() {
    let split = generate_split(1, 5, 1, 0);
    let lt = render_layout_text(&split.test.documents[0], DEFAULT_GRID).unwrap();
    let chunk = &chunk_document(&lt, &ChunkPolicy::new(ChunkSize::Medium, Tokenizer::default()))[0];
    let examples = select_examples(&split.training.documents, 1, "stl").unwrap();
    let strategy = PromptStrategy::new(PromptKind::FewShot, 3).unwrap();
    let err = build_prompt(chunk, &Schema::vrdu_registration(), strategy, &examples, &PromptTemplates::default()).unwrap_err();
    assert!(err.is_usage());
}

#[test]
fn unsupported_example_count_rejected() {
    assert!(PromptStrategy::new(PromptKind::Cot, 2).unwrap_err().is_usage());
}
