//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use layie_core::backend::{usage_report, Completion, CompletionService, OracleNoise, PricingTable, Usage};
use layie_core::chunker::{chunk_document, ChunkPolicy, ChunkSize, Tokenizer};
use layie_core::corpus::{Document, Page, Word};
use layie_core::metrics::{fuzzy_ratio, normalize_value, value_match, MatchTechnique};
use layie_core::prompting::PromptKind;
use layie_core::refine::Stage;
use layie_core::rendering::{render_layout_text, render_markdown, LayoutText, MarkdownMode, DEFAULT_GRID};
use layie_core::sweep::{
    factorial_search, ofat_search, CallSignature, DimValue, CompletionStore, InputType, OfatPolicy, RunConfig, RunDir, Runner,
    RunnerOptions, SpaceSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dataset, oracle_runner, oracle_service, replay_service, runner_with, MODEL};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn baseline() -> RunConfig {
    RunConfig::baseline(MODEL)
}

// ---------------------------------------------------------------- 1

/// Indel distance by the textbook quadratic recurrence.
fn indel_distance(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut row = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            row[j] = if a[i - 1] == b[j - 1] {
                prev[j - 1]
            } else {
                1 + prev[j].min(row[j - 1])
            };
        }
        prev = row;
    }
    prev[b.len()]
}

fn oracle_ratio(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let total = a.len() + b.len();
    if total == 0 {
        1.0
    } else {
        (total - indel_distance(&a, &b)) as f64 / total as f64
    }
}

fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s| alphabet.iter().map(move |c| format!("{s}{c}")))
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let words = all_strings(&['a', 'b'], 6);
    let mut checked = 0usize;
    for a in &words {
        for b in &words {
            let (got, want) = (fuzzy_ratio(a, b), oracle_ratio(a, b));
            ensure!((got - want).abs() <= 1e-12, "{a:?} vs {b:?}: {got} != {want}");
            checked += 1;
        }
    }
    let alphabets: [&[char]; 3] = [&['a', 'b'], &['a', 'b', 'c', 'd', ' ', 'é'], &['x', 'y', 'z', 'ß', '1', '2', '3', 'Q', '-']];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gen = |rng: &mut ChaCha8Rng, alphabet: &[char]| -> String {
        let n = rng.gen_range(0..=32);
        (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
    };
    for i in 0..10_000 {
        let alphabet = alphabets[i % alphabets.len()];
        let (a, b) = (gen(&mut rng, alphabet), gen(&mut rng, alphabet));
        let (got, want) = (fuzzy_ratio(&a, &b), oracle_ratio(&a, &b));
        ensure!((got - want).abs() <= 1e-12, "{a:?} vs {b:?}: {got} != {want}");
        checked += 1;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{checked} pairs agree, {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let (a, b) = (normalize_value("Jim Slattery"), normalize_value("jim slatters"));
    let r = fuzzy_ratio(&a, &b);
    ensure!((r - 22.0 / 24.0).abs() <= 1e-12, "ratio {r} != 22/24");
    ensure!(value_match("Jim Slatters", "Jim Slattery", MatchTechnique::fuzzy(0.8).unwrap()), "fuzzy match failed");
    let (gt, pred) = ("general manager", "general manager, north america");
    ensure!(value_match(pred, gt, MatchTechnique::Substring), "substring failed");
    ensure!(!value_match(pred, gt, MatchTechnique::Exact), "exact matched");
    Ok(format!("ratio {r:.6}, substring matches, exact rejects"))
}

// ---------------------------------------------------------------- 3

fn random_document(id: usize, rng: &mut ChaCha8Rng) -> Document {
    const ALPHA: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,:-/|#";
    let pages = (0..rng.gen_range(1..=3))
        .map(|_| {
            let (width, height): (f64, f64) = (rng.gen_range(100.0..1000.0), rng.gen_range(100.0..1200.0));
            let words = (0..rng.gen_range(0..400))
                .map(|_| {
                    // mostly short words, occasionally one long enough to overflow small budgets
                    let len = if rng.gen_bool(0.01) { rng.gen_range(60..400) } else { rng.gen_range(1..14) };
                    let text: String = (0..len).map(|_| ALPHA[rng.gen_range(0..ALPHA.len())] as char).collect();
                    let (x0, y0) = (rng.gen_range(0.0..width * 0.95), rng.gen_range(0.0..height * 0.97));
                    let x1 = (x0 + rng.gen_range(1.0..width * 0.3)).min(width);
                    let y1 = (y0 + rng.gen_range(1.0..height * 0.03)).min(height);
                    Word::new(text, [x0, y0, x1, y1])
                })
                .collect();
            Page { width, height, words }
        })
        .collect();
    Document {
        id: format!("rand-{id}"),
        pages,
        ground_truth: Default::default(),
    }
}

fn check_chunking(lt: &LayoutText) -> Result<(), String> {
    let expected: Vec<&str> = lt.words().map(|w| w.text.as_str()).collect();
    let tok = Tokenizer::default();
    let mut policies: Vec<ChunkPolicy> = [8, 32, 128, 512]
        .into_iter()
        .map(|n| ChunkPolicy::with_limit(ChunkSize::Small, tok, n))
        .collect();
    policies.extend(ChunkSize::ALL.map(|s| ChunkPolicy::new(s, tok)));
    let mut last_count = usize::MAX;
    for policy in &policies {
        let chunks = chunk_document(lt, policy);
        ensure!(chunks == chunk_document(lt, policy), "{}: nondeterministic", lt.doc_id);
        let got: Vec<&str> = chunks.iter().flat_map(|c| c.words()).collect();
        ensure!(got == expected, "{}: words lost or reordered at budget {}", lt.doc_id, policy.token_limit());
        for (i, c) in chunks.iter().enumerate() {
            ensure!(c.index == i && c.word_count() > 0, "{}: bad chunk {i}", lt.doc_id);
            ensure!(c.token_cost == tok.cost(&c.serialize()), "{}: stale cost on chunk {i}", lt.doc_id);
            ensure!(
                c.token_cost <= policy.token_limit() || (c.oversized && c.word_count() == 1),
                "{}: chunk {i} costs {} over {}",
                lt.doc_id,
                c.token_cost,
                policy.token_limit()
            );
        }
        ensure!(chunks.len() <= last_count, "{}: more chunks at a larger budget", lt.doc_id);
        last_count = chunks.len();
    }
    Ok(())
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut words = 0;
    for i in 0..1000 {
        let doc = random_document(i, &mut rng);
        let ocr = render_layout_text(&doc, DEFAULT_GRID).map_err(|e| e.to_string())?;
        ensure!(ocr.word_count() == doc.words().count(), "{}: rendering dropped words", doc.id);
        check_chunking(&ocr)?;
        let md = render_markdown(&doc, MarkdownMode::RuleBased, None).map_err(|e| e.to_string())?;
        check_chunking(&md)?;
        words += ocr.word_count();
    }
    Ok(format!("1000 documents, {words} words, 7 budgets, both representations"))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let runner = oracle_runner(dataset(40, 5, 4), OracleNoise::default());
    let r = runner.execute_config(&baseline()).map_err(|e| e.to_string())?;
    ensure!(r.prf.f1 == 1.0, "F1 {} ({:?})", r.prf.f1, r.counts);
    Ok(format!("F1 {:.3} over {} values", r.prf.f1, r.counts.tp))
}

// ---------------------------------------------------------------- 5

fn stage_f1(noise: OracleNoise) -> Result<[f64; 3], String> {
    let runner = oracle_runner(dataset(40, 5, 5), noise);
    let mut out = [0.0; 3];
    for (i, stage) in Stage::ALL.into_iter().enumerate() {
        let cfg = baseline().with(DimValue::Stage(stage));
        out[i] = runner.execute_config(&cfg).map_err(|e| e.to_string())?.prf.f1;
    }
    Ok(out)
}

fn criterion_5() -> Outcome {
    let keys = OracleNoise {
        key_mangle_rate: 0.3,
        seed: 5,
        ..Default::default()
    };
    let key_run = stage_f1(keys)?;
    let [initial, mapped, _] = key_run;
    ensure!(mapped > initial, "key noise: mapped {mapped} <= initial {initial}");
    ensure!(mapped == 1.0, "key noise: mapped {mapped} != 1");
    let values = OracleNoise {
        value_reformat_rate: 0.3,
        seed: 5,
        ..Default::default()
    };
    let value_run = stage_f1(values)?;
    let [_, mapped_v, cleaned] = value_run;
    ensure!(cleaned == 1.0 && cleaned > mapped_v, "value noise: cleaned {cleaned}, mapped {mapped_v}");
    ensure!(stage_f1(keys)? == key_run, "key noise run not deterministic");
    ensure!(stage_f1(values)? == value_run, "value noise run not deterministic");
    Ok(format!(
        "keys: initial {initial:.3} < mapped {mapped:.3}; values: mapped {mapped_v:.3} < cleaned {cleaned:.3}"
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let noise = OracleNoise {
        key_mangle_rate: 0.2,
        value_reformat_rate: 0.2,
        hallucination_rate: 0.2,
        json_corruption_rate: 0.1,
        seed: 6,
    };
    let runner = oracle_runner(dataset(40, 5, 6), noise);
    let space = SpaceSpec {
        input_types: InputType::ALL.to_vec(),
        chunk_sizes: vec![ChunkSize::Medium],
        prompt_types: PromptKind::ALL.to_vec(),
        example_counts: vec![0, 3],
        ..SpaceSpec::full(vec![MODEL.into()])
    };
    let out = factorial_search(&runner, &space, &baseline()).map_err(|e| e.to_string())?;
    let f1: HashMap<String, f64> = out.results.iter().map(|r| (r.config.label(), r.prf.f1)).collect();
    let mut groups = 0;
    for r in out.results.iter().filter(|r| r.config.technique == MatchTechnique::Exact) {
        let exact = r.prf.f1;
        for tech in [MatchTechnique::Substring, MatchTechnique::fuzzy(0.8).unwrap()] {
            let other = f1[&r.config.with(DimValue::Technique(tech)).label()];
            ensure!(other >= exact, "{}: {tech} {other} < exact {exact}", r.config);
        }
        groups += 1;
    }
    Ok(format!("{groups} prediction sets, substring and fuzzy never below exact"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let noise = OracleNoise {
        key_mangle_rate: 0.1,
        value_reformat_rate: 0.1,
        hallucination_rate: 0.1,
        json_corruption_rate: 0.05,
        seed: 7,
    };
    let data = dataset(40, 5, 7);
    let space = SpaceSpec::full(vec![MODEL.into()]);
    let runner = oracle_runner(data.clone(), noise);
    let fact = factorial_search(&runner, &space, &baseline()).map_err(|e| e.to_string())?;
    ensure!(fact.computations == 48, "{} completion-set computations", fact.computations);
    ensure!(fact.results.len() == 432, "{} scored rows", fact.results.len());
    let runner = oracle_runner(data, noise);
    let ofat = ofat_search(&runner, &space, &baseline(), OfatPolicy::PerModel).map_err(|e| e.to_string())?;
    let pct = 100.0 * ofat.fraction_of_space();
    ensure!(format!("{pct:.1}") == "2.8", "OFAT covers {pct:.3}% of the space");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "48 computations, 432 rows, OFAT {} configs = {pct:.2}% ({} signatures), {:.1}s",
        ofat.explored_per_model,
        ofat.call_bearing_per_model,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 8

/// Hallucination rate per value of each call-bearing dimension. The effects
/// add, and the oracle's per-item draws are shared across rates, so a larger
/// total rate never yields fewer hallucinations.
fn penalty(sig: &CallSignature, interaction: bool) -> f64 {
    let input = match sig.input_type {
        InputType::Ocr => 0.10,
        InputType::Markdown => 0.0,
    };
    let chunk = match sig.chunk_size {
        ChunkSize::Small => 0.05,
        ChunkSize::Medium => 0.10,
        ChunkSize::Max => 0.0,
    };
    let prompt = match sig.prompt_type {
        PromptKind::FewShot => 0.0,
        PromptKind::Cot => 0.15,
    };
    let examples = match sig.example_count {
        0 => 0.20,
        1 => 0.10,
        3 => 0.0,
        _ => 0.05,
    };
    let pair = if interaction && sig.input_type == InputType::Markdown && sig.chunk_size == ChunkSize::Max {
        0.30
    } else {
        0.0
    };
    input + chunk + prompt + examples + pair
}

fn landscape_runner(interaction: bool) -> Runner {
    let data = dataset(40, 5, 8);
    let services: Mutex<HashMap<CallSignature, Arc<CompletionService>>> = Mutex::new(HashMap::new());
    let factory_data = data.clone();
    let factory = move |sig: &CallSignature| {
        let mut all = services.lock().expect("services");
        let service = all.entry(sig.clone()).or_insert_with(|| {
            let noise = OracleNoise {
                hallucination_rate: penalty(sig, interaction),
                seed: 8,
                ..Default::default()
            };
            oracle_service(&factory_data, &sig.model, noise, None)
        });
        Ok(service.clone())
    };
    Runner::new(
        data,
        Arc::new(factory),
        CompletionStore::in_memory(),
        PricingTable::reference(),
        RunnerOptions::default(),
    )
    .expect("runner starts")
}

fn criterion_8() -> Outcome {
    let space = SpaceSpec::full(vec![MODEL.into()]);
    let runner = landscape_runner(false);
    let fact = factorial_search(&runner, &space, &baseline()).map_err(|e| e.to_string())?;
    let ofat = ofat_search(&runner, &space, &baseline(), OfatPolicy::PerModel).map_err(|e| e.to_string())?;
    let (best, chosen) = (&fact.best[0], &ofat.chosen[0]);
    ensure!(
        best.config == chosen.config,
        "OFAT chose {} ({:.4}), factorial argmax {} ({:.4})",
        chosen.config,
        chosen.prf.f1,
        best.config,
        best.prf.f1
    );
    let runner = landscape_runner(true);
    let fact_i = factorial_search(&runner, &space, &baseline()).map_err(|e| e.to_string())?;
    let ofat_i = ofat_search(&runner, &space, &baseline(), OfatPolicy::PerModel).map_err(|e| e.to_string())?;
    let gap = fact_i.best[0].prf.f1 - ofat_i.chosen[0].prf.f1;
    Ok(format!(
        "additive: OFAT = argmax = {} (F1 {:.4}); with interaction, factorial minus OFAT F1 gap = {:.2} points",
        best.config,
        best.prf.f1,
        100.0 * gap
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dataset(10, 5, 9);
    let noise = OracleNoise {
        key_mangle_rate: 0.2,
        value_reformat_rate: 0.2,
        hallucination_rate: 0.1,
        json_corruption_rate: 0.1,
        seed: 9,
    };
    let cache = tmp.path().join("cache");
    let space = SpaceSpec::full(vec![MODEL.into()]);
    let sweep = |runner: &Runner, dir: &RunDir| -> Result<Vec<u8>, String> {
        let out = factorial_search(runner, &space, &baseline()).map_err(|e| e.to_string())?;
        dir.write_results(&out.results, "acceptance", 9).map_err(|e| e.to_string())?;
        std::fs::read(dir.scores()).map_err(|e| e.to_string())
    };

    let first_dir = RunDir::new(tmp.path(), "first");
    let service = oracle_service(&data, MODEL, noise, Some(cache.clone()));
    let runner = runner_with(data.clone(), service.clone(), CompletionStore::persistent(first_dir.completions()));
    let first = sweep(&runner, &first_dir)?;
    ensure!(service.backend_calls() > 0, "first sweep made no calls");

    // same run directory: stored completion sets short-circuit everything
    let service = oracle_service(&data, MODEL, noise, Some(cache.clone()));
    let runner = runner_with(data.clone(), service.clone(), CompletionStore::persistent(first_dir.completions()));
    let again = sweep(&runner, &first_dir)?;
    ensure!(service.backend_calls() == 0, "rerun made {} backend calls", service.backend_calls());
    ensure!(again == first, "rerun scores.jsonl differs");

    // fresh run directory, replay only: every prompt must come from the cache
    let replay_dir = RunDir::new(tmp.path(), "replay");
    let service = replay_service(noise, MODEL, cache);
    let runner = runner_with(data, service.clone(), CompletionStore::persistent(replay_dir.completions()));
    let replayed = sweep(&runner, &replay_dir)?;
    ensure!(service.backend_calls() == 0, "replay made {} backend calls", service.backend_calls());
    ensure!(replayed == first, "replayed scores.jsonl differs");
    Ok(format!(
        "0 calls on rerun and on replay ({} cache hits), scores.jsonl identical ({} bytes)",
        service.cache_hits(),
        first.len()
    ))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let ledger: Vec<Completion> = (0..322)
        .map(|i| Completion {
            prompt_digest: format!("{i:064x}"),
            model_name: "gpt-3.5-turbo".into(),
            text: "{}".into(),
            usage: Usage {
                input_tokens: 800,
                output_tokens: 200,
            },
            from_cache: false,
        })
        .collect();
    let summary = usage_report(&ledger, &PricingTable::reference());
    ensure!(summary.total_tokens == 322_000, "{} tokens", summary.total_tokens);
    ensure!((summary.total_cost_usd - 0.18).abs() <= 0.005, "cost {}", summary.total_cost_usd);
    let printed = summary.to_string();
    ensure!(printed.contains("$0.18"), "report prints {printed:?}");
    let cost_line = printed.lines().find(|l| l.contains('$')).unwrap_or_default().trim().to_string();
    Ok(format!("322000 tokens -> {cost_line}"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", criterion_1),
        ("reference pair check", criterion_2),
        ("chunker properties", criterion_3),
        ("end-to-end oracle soundness", criterion_4),
        ("refinement efficacy", criterion_5),
        ("metric monotonicity", criterion_6),
        ("sweep accounting", criterion_7),
        ("OFAT optimality on additive landscapes", criterion_8),
        ("cache determinism", criterion_9),
        ("cost accounting", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
