use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CacheKey, FingerprintFields, GatewayError, ModelQuery, TokenUsage};
use crate::digest;

/// One stored response: the fingerprinted request fields plus the reply text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub prompt_text: String,
    pub image_sha256: String,
    pub reply_text: String,
    #[serde(default)]
    pub token_usage: Option<TokenUsage>,
}

impl CacheEntry {
    pub fn for_query(query: &ModelQuery, reply_text: impl Into<String>, token_usage: Option<TokenUsage>) -> Self {
        let f = query.fingerprint_fields();
        CacheEntry {
            key: query.params_fingerprint().clone(),
            model_name: f.model_name,
            temperature: f.temperature,
            max_output_tokens: f.max_output_tokens,
            prompt_text: f.prompt_text,
            image_sha256: f.image_sha256,
            reply_text: reply_text.into(),
            token_usage,
        }
    }

    pub fn fingerprint_fields(&self) -> FingerprintFields {
        FingerprintFields {
            image_sha256: self.image_sha256.clone(),
            max_output_tokens: self.max_output_tokens,
            model_name: self.model_name.clone(),
            prompt_text: self.prompt_text.clone(),
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CacheVerifyReport {
    pub entries: usize,
    pub valid: usize,
    pub invalid: Vec<(PathBuf, String)>,
}

/// Content-addressed response store laid out as `<root>/<key[..2]>/<key>.json`.
///
/// Writes go to a temp file in the shard directory and are renamed into
/// place, so concurrent writers of one key leave exactly one complete file.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
    read_only: bool,
}

fn cache_err(context: &str, path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Cache(format!("{context} {}: {e}", path.display()))
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| cache_err("creating", &root, e))?;
        Ok(ResponseCache { root, read_only: false })
    }

    /// Opens an existing directory (e.g. a replay archive) without write access.
    pub fn open_read_only(root: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(GatewayError::Cache(format!("{} is not a directory", root.display())));
        }
        Ok(ResponseCache { root, read_only: true })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let k = key.as_str();
        self.root.join(&k[..2.min(k.len())]).join(format!("{k}.json"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path_for(key);
        let data = match fs::read(&path) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err("reading", &path, e)),
        };
        let entry: CacheEntry = serde_json::from_slice(&data).map_err(|e| cache_err("parsing", &path, e))?;
        if &entry.key != key {
            return Err(cache_err("key mismatch in", &path, entry.key));
        }
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        if self.read_only {
            return Err(GatewayError::Cache(format!("{} is read-only", self.root.display())));
        }
        let path = self.path_for(&entry.key);
        let shard = path.parent().expect("cache path has a shard directory");
        fs::create_dir_all(shard).map_err(|e| cache_err("creating", shard, e))?;
        let mut body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        body.push(b'\n');
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempfile_in(shard)
            .map_err(|e| cache_err("creating temp file in", shard, e))?;
        tmp.write_all(&body).map_err(|e| cache_err("writing", tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| cache_err("persisting", &path, e.error))?;
        Ok(())
    }

    /// Re-derives every entry's key from its stored fields and compares it with
    /// the embedded key and the file name.
    pub fn verify(&self) -> Result<CacheVerifyReport, GatewayError> {
        let mut report = CacheVerifyReport::default();
        let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&self.root)
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
            })
            .collect();
        files.sort();
        for path in files {
            report.entries += 1;
            match check_file(&path) {
                Ok(()) => report.valid += 1,
                Err(reason) => report.invalid.push((path, reason)),
            }
        }
        Ok(report)
    }
}

fn check_file(path: &Path) -> Result<(), String> {
    let data = fs::read(path).map_err(|e| e.to_string())?;
    let entry: CacheEntry = serde_json::from_slice(&data).map_err(|e| e.to_string())?;
    let recomputed = entry.fingerprint_fields().key();
    if recomputed != entry.key {
        return Err(format!("stored key {} but fields hash to {recomputed}", entry.key));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    if stem != entry.key.as_str() {
        return Err(format!("file name does not match key {}", entry.key));
    }
    let shard = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()).unwrap_or_default();
    if !digest::is_hex64(stem) || !stem.starts_with(shard) {
        return Err("entry is not in its shard directory".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::gateway::EndpointConfig;

    fn query(text: &str) -> ModelQuery {
        ModelQuery::text(Arc::new(EndpointConfig::new("http://x/v1", "m")), text)
    }

    #[test]
    fn put_get_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let q = query("hello");
        let entry = CacheEntry::for_query(&q, "world", None);
        cache.put(&entry).unwrap();
        let key = q.params_fingerprint();
        let expected = dir.path().join(&key.as_str()[..2]).join(format!("{key}.json"));
        assert!(expected.is_file());
        assert_eq!(cache.get(key).unwrap(), Some(entry));
        assert_eq!(cache.get(query("other").params_fingerprint()).unwrap(), None);
    }

    #[test]
    fn read_only_rejects_writes() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open_read_only(dir.path()).unwrap();
        let entry = CacheEntry::for_query(&query("a"), "b", None);
        assert!(matches!(cache.put(&entry), Err(GatewayError::Cache(_))));
        assert!(ResponseCache::open_read_only(dir.path().join("nope")).is_err());
    }

    #[test]
    fn verify_flags_tampered_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let q = query("a");
        cache.put(&CacheEntry::for_query(&q, "b", None)).unwrap();
        cache.put(&CacheEntry::for_query(&query("c"), "d", None)).unwrap();
        assert_eq!(cache.verify().unwrap().valid, 2);

        let path = cache.path_for(q.params_fingerprint());
        let mut entry: CacheEntry = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        entry.prompt_text = "tampered".into();
        fs::write(&path, serde_json::to_vec(&entry).unwrap()).unwrap();
        let report = cache.verify().unwrap();
        assert_eq!(report.entries, 2);
        assert_eq!(report.valid, 1);
        assert_eq!(report.invalid.len(), 1);
    }

    #[test]
    fn concurrent_writers_same_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let q = query("same");
        let entry = CacheEntry::for_query(&q, "identical reply", None);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cache.put(&entry).unwrap());
            }
        });
        assert_eq!(cache.get(q.params_fingerprint()).unwrap(), Some(entry));
        assert_eq!(cache.verify().unwrap().entries, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn stored_reply_is_byte_identical(prompt in "\\PC{1,40}", reply in "\\PC{0,200}") {
            let dir = tempfile::tempdir().unwrap();
            let cache = ResponseCache::open(dir.path()).unwrap();
            let q = query(&prompt);
            cache.put(&CacheEntry::for_query(&q, reply.clone(), None)).unwrap();
            let got = cache.get(q.params_fingerprint()).unwrap().unwrap();
            prop_assert_eq!(got.reply_text.as_bytes(), reply.as_bytes());
        }
    }
}
