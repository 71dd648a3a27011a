use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{CallSignature, InputType, RunConfig};
use crate::backend::{spec_fingerprint, usage_report, Completer, Completion, CompletionService, CostSummary, PricingTable};
use crate::chunker::{chunk_document, ChunkPolicy, Tokenizer};
use crate::corpus::{select_examples, Corpus, Document, ExampleSet, Schema};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, score_document, MatchCounts, Prf, ScoreRecord};
use crate::prompting::{build_prompt, Condenser, Prompt, PromptPurpose, PromptStrategy, PromptTemplates};
use crate::refine::{decode_completions, refine_to, SynonymTable};
use crate::rendering::{render_layout_text, render_markdown, MarkdownMode, DEFAULT_GRID};

/// Documents to score, documents to draw prompt examples from, and the
/// refinement resources.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub test: Vec<Document>,
    pub training: Vec<Document>,
    pub schema: Schema,
    pub synonyms: SynonymTable,
}

impl Dataset {
    pub fn new(test: Corpus, training: Corpus, schema: Schema, synonyms: SynonymTable) -> Result<Self> {
        test.validate_against(&schema)?;
        training.validate_against(&schema)?;
        Ok(Dataset {
            test: test.documents,
            training: training.documents,
            schema,
            synonyms,
        })
    }

    pub fn all_documents(&self) -> impl Iterator<Item = &Document> {
        self.test.iter().chain(&self.training)
    }

    /// Digest over documents, ground truth and schema.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.all_documents() {
            h.update(serde_json::to_vec(d).expect("document serializes"));
            h.update(b"\n");
        }
        h.update(self.schema.representation().as_bytes());
        hex::encode(&h.finalize()[..16])
    }
}

/// Hands out the completion service for a call signature.
pub trait BackendFactory: Send + Sync {
    fn service(&self, signature: &CallSignature) -> Result<Arc<CompletionService>>;
}

impl<F> BackendFactory for F
where
    F: Fn(&CallSignature) -> Result<Arc<CompletionService>> + Send + Sync,
{
    fn service(&self, signature: &CallSignature) -> Result<Arc<CompletionService>> {
        self(signature)
    }
}

/// One service per model.
#[derive(Default)]
pub struct ModelServices(pub HashMap<String, Arc<CompletionService>>);

impl BackendFactory for ModelServices {
    fn service(&self, signature: &CallSignature) -> Result<Arc<CompletionService>> {
        self.0
            .get(&signature.model)
            .cloned()
            .ok_or_else(|| Error::usage(format!("no backend configured for model `{}`", signature.model)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocCompletions {
    pub doc_id: String,
    /// In chunk order.
    pub completions: Vec<Completion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedDoc {
    pub doc_id: String,
    pub error: String,
}

/// Every completion needed to score any configuration with one call signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionSet {
    pub signature: CallSignature,
    pub fingerprint: String,
    pub example_ids: Vec<String>,
    pub degraded_examples: usize,
    pub documents: Vec<DocCompletions>,
    /// Example-condensing and Markdown-conversion completions.
    pub auxiliary: Vec<Completion>,
    pub failed: Vec<FailedDoc>,
    /// Inner backend calls made while building this set.
    #[serde(skip)]
    pub llm_calls: usize,
    #[serde(skip)]
    pub cache_hits: usize,
}

impl CompletionSet {
    pub fn usage(&self, pricing: &PricingTable) -> CostSummary {
        let all = self.documents.iter().flat_map(|d| d.completions.iter()).chain(&self.auxiliary);
        usage_report(all, pricing)
    }

    pub fn prompt_count(&self) -> usize {
        self.documents.iter().map(|d| d.completions.len()).sum()
    }
}

type Slot = Arc<Mutex<Option<Arc<CompletionSet>>>>;

/// Completion sets by signature, in memory and optionally on disk as
/// `<dir>/<digest>.json`. Callers asking for the same signature wait for
/// one computation.
#[derive(Default)]
pub struct CompletionStore {
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<CallSignature, Slot>>,
    computations: AtomicUsize,
}

impl CompletionStore {
    pub fn in_memory() -> Self {
        CompletionStore::default()
    }

    pub fn persistent(dir: impl Into<PathBuf>) -> Self {
        CompletionStore {
            dir: Some(dir.into()),
            ..CompletionStore::default()
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Completion sets computed (not reused) so far.
    pub fn computations(&self) -> usize {
        self.computations.load(Ordering::SeqCst)
    }

    fn file_for(&self, fingerprint: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{fingerprint}.json")))
    }

    fn load(&self, fingerprint: &str) -> Result<Option<CompletionSet>> {
        let Some(path) = self.file_for(fingerprint) else { return Ok(None) };
        match fs::read(&path) {
            Ok(bytes) => {
                let set: CompletionSet = serde_json::from_slice(&bytes)
                    .map_err(|e| Error::parse(fingerprint, path.display().to_string(), e.to_string()))?;
                Ok((set.fingerprint == fingerprint).then_some(set))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn persist(&self, set: &CompletionSet) -> Result<()> {
        let Some(path) = self.file_for(&set.fingerprint) else { return Ok(()) };
        let dir = path.parent().expect("store file has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        serde_json::to_writer(&mut tmp, set)?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }

    /// The stored set for `signature` when its fingerprint matches, else the
    /// result of `compute`. The flag tells whether `compute` ran.
    pub fn get_or_compute(
        &self,
        signature: &CallSignature,
        fingerprint: &str,
        compute: impl FnOnce() -> Result<CompletionSet>,
    ) -> Result<(Arc<CompletionSet>, bool)> {
        let slot = self.slots.lock().expect("store slots").entry(signature.clone()).or_default().clone();
        let mut held = slot.lock().expect("store slot");
        if let Some(set) = held.as_ref().filter(|s| s.fingerprint == fingerprint) {
            return Ok((set.clone(), false));
        }
        if let Some(set) = self.load(fingerprint)? {
            let set = Arc::new(set);
            *held = Some(set.clone());
            return Ok((set, false));
        }
        let set = compute()?;
        self.computations.fetch_add(1, Ordering::SeqCst);
        self.persist(&set)?;
        let set = Arc::new(set);
        *held = Some(set.clone());
        Ok((set, true))
    }
}

/// Counts calls and cache hits, and keeps non-extraction completions.
struct Counting<'a> {
    inner: &'a dyn Completer,
    calls: AtomicUsize,
    hits: AtomicUsize,
    auxiliary: Mutex<Vec<Completion>>,
}

impl<'a> Counting<'a> {
    fn new(inner: &'a dyn Completer) -> Self {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
            auxiliary: Mutex::new(Vec::new()),
        }
    }
}

impl Completer for Counting<'_> {
    fn complete(&self, prompt: &Prompt) -> Result<Completion> {
        let c = self.inner.complete(prompt)?;
        if c.from_cache {
            self.hits.fetch_add(1, Ordering::SeqCst);
        } else {
            self.calls.fetch_add(1, Ordering::SeqCst);
        }
        if prompt.purpose != PromptPurpose::Extraction {
            self.auxiliary.lock().expect("auxiliary").push(c.clone());
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunnerOptions {
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    pub markdown_mode: MarkdownMode,
    pub templates: PromptTemplates,
    pub grid: u32,
    pub tokenizer: Tokenizer,
    /// Record failed documents and continue instead of aborting.
    pub keep_going: bool,
    pub strategy_level: String,
    pub condense_retries: usize,
}

impl Default for RunnerOptions {
    fn default() -> Self {
        RunnerOptions {
            jobs: 0,
            markdown_mode: MarkdownMode::RuleBased,
            templates: PromptTemplates::default(),
            grid: DEFAULT_GRID,
            tokenizer: Tokenizer::default(),
            keep_going: false,
            strategy_level: "stl".into(),
            condense_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub prf: Prf,
    pub counts: MatchCounts,
    pub usage: CostSummary,
    pub llm_calls: usize,
    pub cache_hits: usize,
    /// Some documents failed and were scored with no predictions.
    pub incomplete: bool,
    #[serde(skip)]
    pub doc_scores: Vec<ScoreRecord>,
}

/// Executes configurations against a dataset, computing each call
/// signature's completions at most once.
pub struct Runner {
    dataset: Arc<Dataset>,
    factory: Arc<dyn BackendFactory>,
    store: CompletionStore,
    pricing: PricingTable,
    options: RunnerOptions,
    condensers: Mutex<HashMap<String, Arc<Condenser>>>,
    pool: rayon::ThreadPool,
}

impl Runner {
    pub fn new(
        dataset: Arc<Dataset>,
        factory: Arc<dyn BackendFactory>,
        store: CompletionStore,
        pricing: PricingTable,
        options: RunnerOptions,
    ) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))?;
        Ok(Runner {
            dataset,
            factory,
            store,
            pricing,
            options,
            condensers: Mutex::new(HashMap::new()),
            pool,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn store(&self) -> &CompletionStore {
        &self.store
    }

    pub fn options(&self) -> &RunnerOptions {
        &self.options
    }

    pub fn pool(&self) -> &rayon::ThreadPool {
        &self.pool
    }

    fn condenser(&self, model: &str) -> Arc<Condenser> {
        let mut all = self.condensers.lock().expect("condensers");
        all.entry(model.to_string())
            .or_insert_with(|| Arc::new(Condenser::new(self.options.templates.clone(), self.options.condense_retries)))
            .clone()
    }

    fn fingerprint(&self, signature: &CallSignature, service: &CompletionService) -> String {
        let canonical = serde_json::json!({
            "signature": signature,
            "backend": spec_fingerprint(service.spec()),
            "dataset": self.dataset.fingerprint(),
            "templates": self.options.templates,
            "markdown_mode": self.options.markdown_mode,
            "grid": self.options.grid,
            "tokenizer": self.options.tokenizer,
            "strategy_level": self.options.strategy_level,
        });
        let bytes = serde_json::to_vec(&canonical).expect("fingerprint serializes");
        hex::encode(&Sha256::digest(&bytes)[..16])
    }

    fn process_document(
        &self,
        doc: &Document,
        signature: &CallSignature,
        examples: &ExampleSet,
        backend: &dyn Completer,
    ) -> Result<Vec<Completion>> {
        let layout = match signature.input_type {
            InputType::Ocr => render_layout_text(doc, self.options.grid)?,
            InputType::Markdown => render_markdown(doc, self.options.markdown_mode, Some(backend))?,
        };
        let policy = ChunkPolicy::new(signature.chunk_size, self.options.tokenizer);
        let strategy = PromptStrategy::new(signature.prompt_type, signature.example_count)?;
        chunk_document(&layout, &policy)
            .iter()
            .map(|chunk| {
                let prompt = build_prompt(chunk, &self.dataset.schema, strategy, examples, &self.options.templates)
                    .map_err(|e| e.in_chunk(&doc.id, chunk.index))?;
                backend.complete(&prompt).map_err(|e| e.in_chunk(&doc.id, chunk.index))
            })
            .collect()
    }

    fn compute_set(&self, signature: &CallSignature, service: &CompletionService, fingerprint: String) -> Result<CompletionSet> {
        let counting = Counting::new(service);
        let mut examples = select_examples(&self.dataset.training, signature.example_count, &self.options.strategy_level)?;
        let condenser = self.condenser(&signature.model);
        let mut degraded = 0;
        for ex in &mut examples.examples {
            let doc = self
                .dataset
                .training
                .iter()
                .find(|d| d.id == ex.doc_id)
                .expect("examples come from the training set");
            let c = condenser.condense(doc, &ex.entities, &self.dataset.schema, &counting)?;
            degraded += usize::from(c.degraded);
            ex.condensed_text = c.text;
        }

        let outcomes: Vec<(String, Result<Vec<Completion>>)> = self.pool.install(|| {
            self.dataset
                .test
                .par_iter()
                .map(|doc| (doc.id.clone(), self.process_document(doc, signature, &examples, &counting)))
                .collect()
        });
        let mut documents = Vec::new();
        let mut failed = Vec::new();
        for (doc_id, outcome) in outcomes {
            match outcome {
                Ok(completions) => documents.push(DocCompletions { doc_id, completions }),
                Err(e) if self.options.keep_going && !e.is_usage() => {
                    log::error!("{signature}: {e}");
                    failed.push(FailedDoc {
                        doc_id,
                        error: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let mut auxiliary = counting.auxiliary.into_inner().expect("auxiliary");
        auxiliary.sort_by(|a, b| a.prompt_digest.cmp(&b.prompt_digest));
        auxiliary.dedup_by(|a, b| a.prompt_digest == b.prompt_digest);
        Ok(CompletionSet {
            signature: signature.clone(),
            fingerprint,
            example_ids: examples.examples.iter().map(|e| e.doc_id.clone()).collect(),
            degraded_examples: degraded,
            documents,
            auxiliary,
            failed,
            llm_calls: counting.calls.load(Ordering::SeqCst),
            cache_hits: counting.hits.load(Ordering::SeqCst),
        })
    }

    /// The completions for `signature`, computed unless already stored.
    /// The flag tells whether they were computed by this call.
    pub fn completion_set(&self, signature: &CallSignature) -> Result<(Arc<CompletionSet>, bool)> {
        let service = self.factory.service(signature)?;
        let fingerprint = self.fingerprint(signature, &service);
        self.store
            .get_or_compute(signature, &fingerprint.clone(), || self.compute_set(signature, &service, fingerprint))
    }

    /// Score `config` from a completion set for its signature.
    pub fn score(&self, config: &RunConfig, set: &CompletionSet, computed: bool) -> RunResult {
        let by_id: HashMap<&str, &DocCompletions> = set.documents.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let doc_scores: Vec<ScoreRecord> = self
            .dataset
            .test
            .iter()
            .map(|doc| {
                let texts = by_id.get(doc.id.as_str()).into_iter().flat_map(|d| d.completions.iter()).map(|c| c.text.as_str());
                let initial = decode_completions(&doc.id, texts);
                let preds = refine_to(&initial, config.refinement_stage, &self.dataset.schema, &self.dataset.synonyms);
                let counts = score_document(&preds, &doc.ground_truth, config.technique);
                ScoreRecord::new(&doc.id, config.technique, config.refinement_stage, counts)
            })
            .collect();
        let counts: Vec<MatchCounts> = doc_scores
            .iter()
            .map(|r| MatchCounts {
                tp: r.tp,
                fp: r.fp,
                fn_: r.fn_,
            })
            .collect();
        RunResult {
            config: config.clone(),
            prf: aggregate(&counts),
            counts: counts.iter().sum(),
            usage: set.usage(&self.pricing),
            llm_calls: if computed { set.llm_calls } else { 0 },
            cache_hits: if computed { set.cache_hits } else { 0 },
            incomplete: !set.failed.is_empty(),
            doc_scores,
        }
    }

    /// Render, chunk, prompt and complete for the config's call signature
    /// (skipped when its completions are stored), then refine and score.
    pub fn execute_config(&self, config: &RunConfig) -> Result<RunResult> {
        let (set, computed) = self.completion_set(&config.signature())?;
        Ok(self.score(config, &set, computed))
    }
}
