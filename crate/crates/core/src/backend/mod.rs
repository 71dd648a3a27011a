//! Completion backends behind one interface: a remote chat-completions
//! service, a ground-truth oracle, and replay of a stored run.

mod cache;
mod http;
mod oracle;
mod usage;

pub use cache::{CacheRecord, CompletionCache};
pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use oracle::OracleBackend;
pub use usage::{usage_report, CostSummary, ModelCost, Pricing, PricingTable};

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prompting::Prompt;

/// Anything that turns a prompt into a completion.
pub trait Completer: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<Completion>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    #[serde(alias = "mock")]
    Oracle,
    Replay,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "http",
            BackendKind::Oracle => "oracle",
            BackendKind::Replay => "replay",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "http" => Ok(BackendKind::Http),
            "oracle" | "mock" => Ok(BackendKind::Oracle),
            "replay" => Ok(BackendKind::Replay),
            other => Err(Error::usage(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

/// Failure modes the oracle injects. Each rate is a per-item probability.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleNoise {
    /// Emit keys with spaces, hyphens, capitals or a synonym.
    pub key_mangle_rate: f64,
    /// Dates in long form, numbers with a prefix, free text with case/space noise.
    pub value_reformat_rate: f64,
    /// Add a wrong value next to the true one.
    pub hallucination_rate: f64,
    /// Per completion: drop the closing brace.
    pub json_corruption_rate: f64,
    pub seed: u64,
}

impl OracleNoise {
    pub fn is_silent(&self) -> bool {
        self.key_mangle_rate == 0.0
            && self.value_reformat_rate == 0.0
            && self.hallucination_rate == 0.0
            && self.json_corruption_rate == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("key_mangle_rate", self.key_mangle_rate),
            ("value_reformat_rate", self.value_reformat_rate),
            ("hallucination_rate", self.hallucination_rate),
            ("json_corruption_rate", self.json_corruption_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::usage(format!("{name} must lie in [0,1], got {rate}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub model_name: String,
    pub sampling: Sampling,
    pub pricing: Pricing,
    /// Oracle only.
    pub noise: OracleNoise,
    /// Replay only: the kind whose cache entries are replayed.
    pub replay_source: BackendKind,
    /// Http only.
    pub base_url: Option<String>,
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec {
            kind: BackendKind::Oracle,
            model_name: "oracle".into(),
            sampling: Sampling::default(),
            pricing: Pricing::default(),
            noise: OracleNoise::default(),
            replay_source: BackendKind::Http,
            base_url: None,
        }
    }
}

impl BackendSpec {
    pub fn oracle(model_name: impl Into<String>, noise: OracleNoise) -> Self {
        BackendSpec {
            kind: BackendKind::Oracle,
            model_name: model_name.into(),
            noise,
            ..BackendSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampling.temperature.is_nan() || self.sampling.temperature < 0.0 {
            return Err(Error::usage(format!("temperature must be >= 0, got {}", self.sampling.temperature)));
        }
        if self.replay_source == BackendKind::Replay {
            return Err(Error::usage("replay_source cannot itself be replay"));
        }
        self.pricing.validate()?;
        self.noise.validate()
    }

    /// The kind whose outputs this spec produces or reproduces.
    pub fn effective_kind(&self) -> BackendKind {
        match self.kind {
            BackendKind::Replay => self.replay_source,
            k => k,
        }
    }
}

/// Content digest over everything that determines a completion: prompt text,
/// model, sampling parameters, the producing backend kind, and for the oracle
/// the noise settings.
pub fn cache_key(prompt: &Prompt, spec: &BackendSpec) -> String {
    let mut canonical = spec_fingerprint(spec);
    canonical["prompt"] = serde_json::Value::String(prompt.text.clone());
    let bytes = serde_json::to_vec(&canonical).expect("cache key serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// The spec fields that determine completions; replay specs match their source.
pub fn spec_fingerprint(spec: &BackendSpec) -> serde_json::Value {
    let kind = spec.effective_kind();
    let mut canonical = serde_json::json!({
        "kind": kind,
        "model": spec.model_name,
        "temperature": spec.sampling.temperature,
        "max_output_tokens": spec.sampling.max_output_tokens,
    });
    if kind == BackendKind::Oracle {
        canonical["noise"] = serde_json::to_value(spec.noise).expect("noise serializes");
    }
    canonical
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub prompt_digest: String,
    pub model_name: String,
    pub text: String,
    pub usage: Usage,
    pub from_cache: bool,
}

/// Wraps a backend with the on-disk cache, deduplication of concurrent
/// identical requests, and call counters.
pub struct CompletionService {
    spec: BackendSpec,
    backend: Option<Box<dyn Completer>>,
    cache: Option<CompletionCache>,
    in_flight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    backend_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl fmt::Debug for CompletionService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompletionService")
            .field("spec", &self.spec)
            .field("cache", &self.cache)
            .field("backend_calls", &self.backend_calls())
            .field("cache_hits", &self.cache_hits())
            .finish()
    }
}

impl CompletionService {
    /// `backend` must be `None` exactly when `spec.kind` is replay.
    pub fn new(spec: BackendSpec, backend: Option<Box<dyn Completer>>, cache_dir: Option<PathBuf>) -> Result<Self> {
        spec.validate()?;
        match (spec.kind, backend.is_some()) {
            (BackendKind::Replay, true) => return Err(Error::usage("replay backend takes no inner backend")),
            (BackendKind::Replay, false) if cache_dir.is_none() => {
                return Err(Error::usage("replay backend needs a cache directory"))
            }
            (BackendKind::Http | BackendKind::Oracle, false) => {
                return Err(Error::usage(format!("{} backend needs an implementation", spec.kind)))
            }
            _ => {}
        }
        Ok(CompletionService {
            spec,
            backend,
            cache: cache_dir.map(CompletionCache::new),
            in_flight: Mutex::new(HashMap::new()),
            backend_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        })
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    /// Inner backend invocations so far (network requests for http).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::SeqCst)
    }

    fn slot(&self, digest: &str) -> Arc<Mutex<()>> {
        let mut table = self.in_flight.lock().expect("in-flight table");
        table.entry(digest.to_string()).or_default().clone()
    }

    fn release(&self, digest: &str, slot: Arc<Mutex<()>>) {
        let mut table = self.in_flight.lock().expect("in-flight table");
        // two references: the table's and ours
        if Arc::strong_count(&slot) <= 2 {
            table.remove(digest);
        }
    }

    fn complete_inner(&self, prompt: &Prompt, digest: &str) -> Result<Completion> {
        if let Some(cache) = &self.cache {
            if let Some(record) = cache.load(digest)? {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(Completion {
                    prompt_digest: digest.to_string(),
                    model_name: record.model_name,
                    text: record.response,
                    usage: record.usage,
                    from_cache: true,
                });
            }
        }
        let Some(backend) = &self.backend else {
            return Err(Error::CacheMiss { digest: digest.to_string() });
        };
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let mut completion = backend.complete(prompt)?;
        completion.prompt_digest = digest.to_string();
        completion.model_name = self.spec.model_name.clone();
        completion.from_cache = false;
        if let Some(cache) = &self.cache {
            cache.store(&CacheRecord::new(digest, prompt, &self.spec, &completion))?;
        }
        Ok(completion)
    }
}

impl Completer for CompletionService {
    fn complete(&self, prompt: &Prompt) -> Result<Completion> {
        let digest = cache_key(prompt, &self.spec);
        let slot = self.slot(&digest);
        let out = {
            let _held = slot.lock().expect("in-flight slot");
            self.complete_inner(prompt, &digest)
        };
        self.release(&digest, slot);
        out
    }
}
