use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{BackendKind, BackendSpec, Completion, Sampling, Usage};
use crate::error::{Error, Result};
use crate::prompting::Prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRequest {
    pub kind: BackendKind,
    pub model_name: String,
    pub sampling: Sampling,
    pub prompt: String,
}

/// One cached completion, stored as `<root>/<digest[..2]>/<digest>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: String,
    pub model_name: String,
    pub request: CacheRequest,
    pub response: String,
    pub usage: Usage,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl CacheRecord {
    pub fn new(digest: &str, prompt: &Prompt, spec: &BackendSpec, completion: &Completion) -> Self {
        CacheRecord {
            digest: digest.to_string(),
            model_name: spec.model_name.clone(),
            request: CacheRequest {
                kind: spec.effective_kind(),
                model_name: spec.model_name.clone(),
                sampling: spec.sampling,
                prompt: prompt.text.clone(),
            },
            response: completion.text.clone(),
            usage: completion.usage,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionCache {
    root: PathBuf,
}

impl CompletionCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CompletionCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("__");
        self.root.join(shard).join(format!("{digest}.json"))
    }

    pub fn load(&self, digest: &str) -> Result<Option<CacheRecord>> {
        let path = self.path_for(digest);
        match fs::read(&path) {
            Ok(bytes) => {
                let record: CacheRecord = serde_json::from_slice(&bytes)
                    .map_err(|e| Error::parse(digest, path.display().to_string(), e.to_string()))?;
                Ok(Some(record))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Write-temp-then-rename; readers never see a partial record.
    pub fn store(&self, record: &CacheRecord) -> Result<()> {
        let path = self.path_for(&record.digest);
        let dir = path.parent().expect("sharded path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        serde_json::to_writer_pretty(&mut tmp, record)?;
        tmp.flush().map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}
