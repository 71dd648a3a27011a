use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use layie_core::backend::{
    BackendKind, BackendSpec, CompletionService, CostSummary, HttpBackend, HttpConfig, OracleBackend, PricingTable, Sampling,
};
use layie_core::corpus::{load_corpus, load_schema, Adapter, Corpus};
use layie_core::metrics::MatchTechnique;
use layie_core::refine::{Stage, SynonymTable};
use layie_core::sweep::{
    emit_report, factorial_search, ofat_search, rows_from_jsonl, CompletionStore, Dataset, ModelServices, ReportFormat,
    ResultRow, RunConfig, RunDir, RunResult, Runner, RunnerOptions, SpaceSpec,
};
use layie_core::synthetic::generate_split;
use layie_core::Error;
use serde_json::json;

use crate::manifest::RunManifest;

/// Dataset, pricing and manifest hash for one resolved manifest.
pub struct Loaded {
    pub manifest: RunManifest,
    pub dataset: Arc<Dataset>,
    pub pricing: PricingTable,
    pub hash: String,
}

pub fn load(manifest: RunManifest) -> Result<Loaded> {
    let adapter: Adapter = manifest.adapter.parse()?;
    let test = load_corpus(&manifest.corpus, adapter)?;
    let training = match &manifest.training {
        Some(p) => load_corpus(p, adapter)?,
        None => Corpus::new(Vec::new())?,
    };
    let schema = match (&manifest.schema, &test.schema) {
        (Some(p), _) => load_schema(p)?,
        (None, Some(s)) => s.clone(),
        (None, None) => test.dynamic_schema()?,
    };
    let synonyms = match &manifest.synonyms {
        Some(p) => SynonymTable::vrdu_default().extend(&SynonymTable::load(p)?)?,
        None => SynonymTable::vrdu_default(),
    };
    let pricing = match &manifest.pricing {
        Some(p) => PricingTable::load(p)?,
        None => PricingTable::reference(),
    };
    let dataset = Dataset::new(test, training, schema, synonyms)?;
    let hash = manifest.hash(&dataset.fingerprint());
    Ok(Loaded {
        manifest,
        dataset: Arc::new(dataset),
        pricing,
        hash,
    })
}

fn spec_for(m: &RunManifest, model: &str, kind: BackendKind) -> BackendSpec {
    BackendSpec {
        kind,
        model_name: model.to_string(),
        sampling: Sampling {
            temperature: m.temperature,
            max_output_tokens: m.max_output_tokens,
        },
        noise: m.noise,
        replay_source: if m.backend == BackendKind::Replay { m.replay_source } else { m.backend },
        base_url: m.base_url.clone(),
        ..BackendSpec::default()
    }
}

/// One completion service per model. With `replay_only` every service reads
/// the prompt cache and nothing else.
fn services(loaded: &Loaded, cache: &Path, replay_only: bool) -> Result<ModelServices> {
    let m = &loaded.manifest;
    let kind = if replay_only { BackendKind::Replay } else { m.backend };
    let mut out = HashMap::new();
    for model in &m.models {
        let spec = spec_for(m, model, kind);
        let inner: Option<Box<dyn layie_core::backend::Completer>> = match kind {
            BackendKind::Oracle => Some(Box::new(OracleBackend::new(
                &spec,
                loaded.dataset.all_documents(),
                loaded.dataset.schema.clone(),
                loaded.dataset.synonyms.clone(),
            )?)),
            BackendKind::Http => {
                let config = HttpConfig::from_env(&spec)?;
                Some(Box::new(HttpBackend::new(spec.clone(), config)?))
            }
            BackendKind::Replay => None,
        };
        let service = CompletionService::new(spec, inner, Some(cache.to_path_buf()))?;
        out.insert(model.clone(), Arc::new(service));
    }
    Ok(ModelServices(out))
}

fn runner(loaded: &Loaded, dir: &RunDir, replay_only: bool) -> Result<Runner> {
    dir.create()?;
    let services = services(loaded, &dir.completions().join("prompts"), replay_only)?;
    let options = RunnerOptions {
        jobs: loaded.manifest.jobs,
        markdown_mode: loaded.manifest.markdown_mode,
        keep_going: loaded.manifest.keep_going,
        ..RunnerOptions::default()
    };
    Ok(Runner::new(
        loaded.dataset.clone(),
        Arc::new(services),
        CompletionStore::persistent(dir.completions()),
        loaded.pricing.clone(),
        options,
    )?)
}

fn apply_free(cfg: &mut RunConfig, technique: Option<&str>, stage: Option<&str>) -> Result<()> {
    if let Some(t) = technique {
        cfg.technique = t.parse::<MatchTechnique>()?;
    }
    if let Some(s) = stage {
        cfg.refinement_stage = s.parse::<Stage>()?;
    }
    Ok(())
}

fn baseline(m: &RunManifest) -> Result<RunConfig> {
    let mut cfg = RunConfig::baseline(m.models[0].clone());
    cfg.apply_overrides(&m.baseline)?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Usage over distinct call signatures, so shared completions count once.
fn sweep_usage(results: &[RunResult]) -> CostSummary {
    let mut seen = HashSet::new();
    let mut total = CostSummary::default();
    for r in results {
        if seen.insert(r.config.signature()) {
            total.merge(&r.usage);
        }
    }
    total
}

fn print_result(r: &RunResult) {
    println!(
        "{}  P {:.3}  R {:.3}  F1 {:.3}{}",
        r.config,
        r.prf.precision,
        r.prf.recall,
        r.prf.f1,
        if r.incomplete { "  (incomplete)" } else { "" }
    );
}

fn finish(loaded: &Loaded, dir: &RunDir, results: &[RunResult], ofat: &[RunConfig]) -> Result<Vec<ResultRow>> {
    let m = &loaded.manifest;
    m.save(&dir.root.join("manifest.json"), &loaded.hash)?;
    let rows = dir.write_results(results, &loaded.hash, m.seed)?;
    let base = baseline(m)?;
    for format in ReportFormat::ALL {
        emit_report(&rows, &base, ofat, format, &dir.root)?;
    }
    let usage = sweep_usage(results);
    let calls: usize = results.iter().map(|r| r.llm_calls).sum();
    let hits: usize = results.iter().map(|r| r.cache_hits).sum();
    println!("{usage}");
    println!("model calls: {calls}, cache hits: {hits}");
    println!("wrote {}", dir.root.display());
    Ok(rows)
}

pub fn run(loaded: Loaded, sweep_id: Option<String>) -> Result<()> {
    let m = &loaded.manifest;
    let mut cfg = baseline(m)?;
    apply_free(&mut cfg, m.technique.as_deref(), m.stage.as_deref())?;
    let dir = RunDir::new(&m.out, &sweep_id.unwrap_or_else(|| format!("run-{}", &loaded.hash[..12])));
    let runner = runner(&loaded, &dir, false)?;
    let result = runner.execute_config(&cfg)?;
    print_result(&result);
    finish(&loaded, &dir, &[result], &[])?;
    Ok(())
}

pub fn sweep(loaded: Loaded, sweep_id: Option<String>) -> Result<()> {
    let m = &loaded.manifest;
    let mode = m.mode.to_ascii_lowercase();
    if mode != "ofat" && mode != "factorial" {
        return Err(Error::usage(format!("unknown sweep mode `{}` (expected ofat or factorial)", m.mode)).into());
    }
    let dir = RunDir::new(&m.out, &sweep_id.unwrap_or_else(|| format!("{mode}-{}", &loaded.hash[..12])));
    let runner = runner(&loaded, &dir, false)?;
    let space = SpaceSpec::full(m.models.clone());
    let base = baseline(m)?;
    let common = json!({ "manifest_hash": loaded.hash, "seed": m.seed });
    if mode == "ofat" {
        let out = ofat_search(&runner, &space, &base, m.policy)?;
        for r in &out.chosen {
            print_result(r);
        }
        println!(
            "scored {} of {} configurations per model ({:.2}%), {} call signatures",
            out.explored_per_model,
            out.space_size_per_model,
            100.0 * out.fraction_of_space(),
            out.call_bearing_per_model
        );
        let mut summary = common;
        summary["policy"] = json!(out.policy);
        summary["sweeps"] = json!(out.sweeps);
        summary["chosen"] = json!(out.chosen.iter().map(|r| json!({"config": r.config, "f1": r.prf.f1})).collect::<Vec<_>>());
        summary["scored_configs_per_model"] = json!(out.explored_per_model);
        summary["call_bearing_configs_per_model"] = json!(out.call_bearing_per_model);
        summary["space_size_per_model"] = json!(out.space_size_per_model);
        summary["scored_fraction"] = json!(out.fraction_of_space());
        write_json(&dir.root.join("ofat.json"), &summary)?;
        let chosen: Vec<RunConfig> = out.chosen.iter().map(|r| r.config.clone()).collect();
        finish(&loaded, &dir, &out.explored, &chosen)?;
    } else {
        let out = factorial_search(&runner, &space, &base)?;
        for r in &out.best {
            print!("best  ");
            print_result(r);
        }
        for r in &out.worst {
            print!("worst ");
            print_result(r);
        }
        println!(
            "{} configurations, {} call signatures, {} computed",
            out.results.len(),
            out.signatures,
            out.computations
        );
        let mut summary = common;
        summary["signatures"] = json!(out.signatures);
        summary["computations"] = json!(out.computations);
        summary["best"] = json!(out.best.iter().map(|r| json!({"config": r.config, "f1": r.prf.f1})).collect::<Vec<_>>());
        summary["worst"] = json!(out.worst.iter().map(|r| json!({"config": r.config, "f1": r.prf.f1})).collect::<Vec<_>>());
        write_json(&dir.root.join("factorial.json"), &summary)?;
        finish(&loaded, &dir, &out.results, &[])?;
    }
    Ok(())
}

fn read_configs(dir: &RunDir) -> Result<Vec<RunConfig>> {
    let path = dir.configs();
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_value(value["configs"].clone()).with_context(|| format!("reading {}", path.display()))
}

fn run_dir(path: &Path) -> RunDir {
    RunDir {
        root: path.to_path_buf(),
    }
}

/// Re-score every stored configuration under a new stage and/or technique,
/// reading completions only from the run directory.
pub fn score(run: &Path, technique: Option<&str>, stage: Option<&str>, jobs: Option<usize>) -> Result<()> {
    let dir = run_dir(run);
    let (mut manifest, hash) = RunManifest::load_saved(&dir.root.join("manifest.json"))?;
    if let Some(j) = jobs {
        manifest.jobs = j.max(1);
    }
    let loaded = load(manifest)?;
    if loaded.hash != hash {
        return Err(Error::usage(format!("inputs of {} changed since the run (manifest hash differs)", run.display())).into());
    }
    let runner = runner(&loaded, &dir, true)?;
    let mut seen = HashSet::new();
    let mut configs = Vec::new();
    for mut cfg in read_configs(&dir)? {
        apply_free(&mut cfg, technique, stage)?;
        if seen.insert(cfg.label()) {
            configs.push(cfg);
        }
    }
    let results = configs.iter().map(|c| runner.execute_config(c)).collect::<layie_core::Result<Vec<_>>>()?;
    for r in &results {
        print_result(r);
    }
    let rows: Vec<ResultRow> = results.iter().map(|r| ResultRow::from_result(r, &hash, loaded.manifest.seed)).collect();
    let name = format!(
        "scores-{}-{}.jsonl",
        stage.unwrap_or("stored"),
        technique.unwrap_or("stored").replace([':', '/'], "_")
    );
    let path = dir.root.join(name);
    std::fs::write(&path, layie_core::sweep::rows_to_jsonl(&rows)).map_err(|e| Error::io(&path, e))?;
    println!("model calls: 0, wrote {}", path.display());
    Ok(())
}

pub fn report(run: Option<&Path>, inputs: &[PathBuf], formats: &[ReportFormat], out: Option<&Path>, baseline_flag: Option<&str>) -> Result<()> {
    let mut files: Vec<PathBuf> = inputs.to_vec();
    if files.is_empty() {
        let run = run.ok_or_else(|| Error::usage("report needs --run or --input"))?;
        files.push(run_dir(run).scores());
    }
    let mut rows = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        rows.extend(rows_from_jsonl(&text, &f.display().to_string())?);
    }
    let hashes: BTreeMap<&str, usize> = rows.iter().fold(BTreeMap::new(), |mut m, r| {
        *m.entry(r.manifest_hash.as_str()).or_default() += 1;
        m
    });
    if hashes.len() > 1 {
        let list: Vec<String> = hashes.iter().map(|(h, n)| format!("{h} ({n} rows)")).collect();
        return Err(Error::usage(format!("refusing to mix results from different manifests: {}", list.join(", "))).into());
    }
    if rows.is_empty() {
        return Err(Error::usage("no results to report").into());
    }
    let saved = run.map(|r| r.join("manifest.json")).filter(|p| p.exists());
    let mut base = match &saved {
        Some(p) => baseline(&RunManifest::load_saved(p)?.0)?,
        None => RunConfig::baseline(rows[0].config.model.clone()),
    };
    if let Some(b) = baseline_flag {
        base.apply_overrides(b)?;
    }
    let ofat: Vec<RunConfig> = match run.map(|r| r.join("ofat.json")).filter(|p| p.exists()) {
        Some(p) => {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
            v["chosen"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|c| serde_json::from_value(c["config"].clone()))
                .collect::<std::result::Result<_, _>>()?
        }
        None => Vec::new(),
    };
    let out = out.map(Path::to_path_buf).or_else(|| run.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("."));
    for format in formats {
        let path = emit_report(&rows, &base, &ofat, *format, &out)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn ingest(corpus: &Path, adapter: &str, out: &Path, schema_out: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(corpus, adapter.parse()?)?;
    corpus.save_normalized(out)?;
    println!("{} documents -> {}", corpus.len(), out.display());
    if let Some(path) = schema_out {
        let schema = match &corpus.schema {
            Some(s) => s.clone(),
            None => corpus.dynamic_schema()?,
        };
        let entries: serde_json::Map<String, serde_json::Value> =
            schema.attributes().iter().map(|a| (a.name.clone(), a.pattern.clone().into())).collect();
        write_json(path, &serde_json::Value::Object(entries))?;
        println!("schema -> {}", path.display());
    }
    Ok(())
}

/// Write a synthetic registration-form corpus: test.jsonl, train.jsonl and schema.json.
pub fn synth(out: &Path, docs: usize, train: usize, seed: u64, filler: usize) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let split = generate_split(docs, train, seed, filler);
    split.test.save_normalized(out.join("test.jsonl"))?;
    split.training.save_normalized(out.join("train.jsonl"))?;
    let schema = split.test.schema.expect("synthetic corpora carry a schema");
    let entries: serde_json::Map<String, serde_json::Value> =
        schema.attributes().iter().map(|a| (a.name.clone(), a.pattern.clone().into())).collect();
    write_json(&out.join("schema.json"), &serde_json::Value::Object(entries))?;
    println!("{docs} test and {train} training documents -> {}", out.display());
    Ok(())
}
