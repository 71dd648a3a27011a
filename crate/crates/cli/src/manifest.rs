//! Run manifests: one TOML or JSON file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use layie_core::backend::{BackendKind, OracleNoise};
use layie_core::rendering::MarkdownMode;
use layie_core::sweep::OfatPolicy;
use layie_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Every field optional so that a file and the flags can be layered.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifestFile {
    pub corpus: Option<PathBuf>,
    pub training: Option<PathBuf>,
    pub adapter: Option<String>,
    pub schema: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub pricing: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub replay_source: Option<BackendKind>,
    pub models: Option<Vec<String>>,
    pub base_url: Option<String>,
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub noise: Option<OracleNoise>,
    pub markdown_mode: Option<MarkdownMode>,
    pub mode: Option<String>,
    pub policy: Option<OfatPolicy>,
    pub baseline: Option<String>,
    pub technique: Option<String>,
    pub stage: Option<String>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub keep_going: Option<bool>,
}

impl ManifestFile {
    /// Parse by extension; anything but `.json` is read as TOML. Relative
    /// paths are resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<ManifestFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: ManifestFile = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::usage(format!("manifest {}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::usage(format!("manifest {}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut m.corpus, &mut m.training, &mut m.schema, &mut m.synonyms, &mut m.pricing, &mut m.out] {
            if let Some(rel) = p.as_mut().filter(|p| p.is_relative()) {
                *rel = base.join(&*rel);
            }
        }
        Ok(m)
    }

    /// Fields set in `flags` win.
    pub fn overlay(self, flags: ManifestFile) -> ManifestFile {
        macro_rules! pick {
            ($($f:ident),*) => { ManifestFile { $($f: flags.$f.or(self.$f)),* } };
        }
        pick!(
            corpus, training, adapter, schema, synonyms, pricing, backend, replay_source, models, base_url, temperature,
            max_output_tokens, noise, markdown_mode, mode, policy, baseline, technique, stage, jobs, out, seed, keep_going
        )
    }
}

/// A fully resolved manifest. Everything that can change a result is hashed;
/// `jobs` and `out` are not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub corpus: PathBuf,
    pub training: Option<PathBuf>,
    pub adapter: String,
    pub schema: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub pricing: Option<PathBuf>,
    pub backend: BackendKind,
    pub replay_source: BackendKind,
    pub models: Vec<String>,
    pub base_url: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub noise: OracleNoise,
    pub markdown_mode: MarkdownMode,
    pub mode: String,
    pub policy: OfatPolicy,
    pub baseline: String,
    pub technique: Option<String>,
    pub stage: Option<String>,
    pub seed: u64,
    pub keep_going: bool,
    #[serde(skip)]
    pub jobs: usize,
    #[serde(skip)]
    pub out: PathBuf,
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if !path.exists() {
        return Err(Error::usage(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(path)
}

impl RunManifest {
    pub fn resolve(m: ManifestFile) -> Result<RunManifest> {
        let corpus = existing(m.corpus.ok_or_else(|| Error::usage("no corpus given (--corpus)"))?, "corpus")?;
        let optional = |p: Option<PathBuf>, what: &str| p.map(|p| existing(p, what)).transpose();
        let seed = m.seed.unwrap_or(0);
        let mut noise = m.noise.unwrap_or_default();
        noise.seed = seed;
        let models = m.models.filter(|v| !v.is_empty()).unwrap_or_else(|| vec!["oracle".into()]);
        Ok(RunManifest {
            training: optional(m.training, "training corpus")?,
            schema: optional(m.schema, "schema")?,
            synonyms: optional(m.synonyms, "synonym table")?,
            pricing: optional(m.pricing, "pricing table")?,
            corpus,
            adapter: m.adapter.unwrap_or_else(|| "normalized".into()),
            backend: m.backend.unwrap_or(BackendKind::Oracle),
            replay_source: m.replay_source.unwrap_or(BackendKind::Http),
            models,
            base_url: m.base_url,
            temperature: m.temperature.unwrap_or(0.0),
            max_output_tokens: m.max_output_tokens.unwrap_or(1024),
            noise,
            markdown_mode: m.markdown_mode.unwrap_or_default(),
            mode: m.mode.unwrap_or_else(|| "ofat".into()),
            policy: m.policy.unwrap_or_default(),
            baseline: m.baseline.unwrap_or_default(),
            technique: m.technique,
            stage: m.stage,
            seed,
            keep_going: m.keep_going.unwrap_or(false),
            jobs: m.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1),
            out: m.out.unwrap_or_else(|| PathBuf::from("runs")),
        })
    }

    /// Digest of the canonical manifest and the data it points at.
    pub fn hash(&self, data_fingerprint: &str) -> String {
        let canonical = serde_json::to_vec(self).expect("manifest serializes");
        let mut h = Sha256::new();
        h.update(&canonical);
        h.update(data_fingerprint.as_bytes());
        hex::encode(&h.finalize()[..16])
    }

    pub fn save(&self, path: &Path, hash: &str) -> Result<()> {
        let mut value = serde_json::to_value(self)?;
        value["manifest_hash"] = hash.into();
        std::fs::write(path, serde_json::to_string_pretty(&value)? + "\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read a manifest written by `save`, with its hash.
    pub fn load_saved(path: &Path) -> Result<(RunManifest, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
        let hash = value
            .as_object_mut()
            .and_then(|o| o.remove("manifest_hash"))
            .and_then(|h| h.as_str().map(str::to_string))
            .ok_or_else(|| Error::usage(format!("{} has no manifest_hash", path.display())))?;
        let mut m: RunManifest = serde_json::from_value(value).with_context(|| format!("reading {}", path.display()))?;
        m.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
        Ok((m, hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = ManifestFile {
            seed: Some(1),
            jobs: Some(2),
            ..Default::default()
        };
        let flags = ManifestFile {
            seed: Some(9),
            ..Default::default()
        };
        let m = file.overlay(flags);
        assert_eq!((m.seed, m.jobs), (Some(9), Some(2)));
    }

    #[test]
    fn hash_ignores_jobs_and_out() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        std::fs::write(&corpus, "").unwrap();
        let make = |jobs| {
            RunManifest::resolve(ManifestFile {
                corpus: Some(corpus.clone()),
                jobs: Some(jobs),
                ..Default::default()
            })
            .unwrap()
        };
        assert_eq!(make(1).hash("d"), make(8).hash("d"));
        assert_ne!(make(1).hash("d"), make(1).hash("e"));
    }

    #[test]
    fn seed_drives_oracle_noise() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        std::fs::write(&corpus, "").unwrap();
        let m = RunManifest::resolve(ManifestFile {
            corpus: Some(corpus),
            seed: Some(17),
            noise: Some(OracleNoise {
                seed: 3,
                ..Default::default()
            }),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(m.noise.seed, 17);
    }
}
