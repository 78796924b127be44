//! Run configuration.
//!
//! Values are layered: built-in defaults, then environment variables, then
//! the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use truthlens_core::digest::{canonical_digest, sha256_hex};
use truthlens_core::eval::DEFAULT_FAILURE_THRESHOLD;
use truthlens_core::gateway::{Backoff, EndpointConfig};
use truthlens_core::pipeline::DEFAULT_SUMMARY_BUDGET;
use truthlens_core::prompts::PromptSet;

pub const CACHE_DIR_ENV: &str = "TRUTHLENS_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".truthlens-cache";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Full,
    #[value(name = "yes_no")]
    YesNo,
    Ablate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Live,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLimitConfig {
    pub per_second: f64,
    pub burst: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mm_endpoint: EndpointConfig,
    pub lm_endpoint: EndpointConfig,
    pub prompt_set_path: Option<PathBuf>,
    pub mode: RunMode,
    pub cache_dir: PathBuf,
    pub replay_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub seed: u64,
    pub skip_failed_prompts: bool,
    pub failure_threshold: f64,
    pub backend: BackendChoice,
    pub mock_script: Option<PathBuf>,
    pub backoff: Backoff,
    pub rate_limit: Option<RateLimitConfig>,
    pub yes_no_prompt: Option<String>,
    pub summary_budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mm_endpoint: EndpointConfig::new("http://127.0.0.1:8000/v1", "llava-v1.5-13b"),
            lm_endpoint: EndpointConfig::new("http://127.0.0.1:8001/v1", "llama-3-8b-instruct"),
            prompt_set_path: None,
            mode: RunMode::Full,
            cache_dir: PathBuf::from(DEFAULT_CACHE_DIR),
            replay_dir: None,
            parallelism: 4,
            seed: 0,
            skip_failed_prompts: false,
            failure_threshold: DEFAULT_FAILURE_THRESHOLD,
            backend: BackendChoice::Live,
            mock_script: None,
            backoff: Backoff::default(),
            rate_limit: None,
            yes_no_prompt: None,
            summary_budget: DEFAULT_SUMMARY_BUDGET,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl RunConfig {
    /// Defaults, overlaid with `env` lookups, overlaid with the TOML `file_text`.
    pub fn layered(env: impl Fn(&str) -> Option<String>, file_text: Option<&str>) -> Result<RunConfig, ConfigError> {
        let mut base = RunConfig::default();
        if let Some(dir) = env(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
            base.cache_dir = PathBuf::from(dir);
        }
        let Some(text) = file_text else {
            return Ok(base);
        };
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        merge(&mut merged, serde_json::to_value(table).map_err(|e| ConfigError(format!("config: {e}")))?);
        serde_json::from_value(merged).map_err(|e| ConfigError(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p).map_err(|e| ConfigError(format!("config {}: {e}", p.display())))?,
            ),
            None => None,
        };
        let mut cfg = RunConfig::layered(|k| std::env::var(k).ok(), text.as_deref())?;
        if let Some(base) = path.and_then(Path::parent) {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    /// Paths in a config file are relative to the file.
    fn resolve_relative(&mut self, base: &Path) {
        for p in [&mut self.prompt_set_path, &mut self.replay_dir, &mut self.mock_script].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, ep) in [("mm_endpoint", &self.mm_endpoint), ("lm_endpoint", &self.lm_endpoint)] {
            ep.validate().map_err(|e| ConfigError(format!("{name}: {e}")))?;
        }
        if self.parallelism == 0 {
            return Err(ConfigError("parallelism must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return Err(ConfigError(format!("failure_threshold must lie in [0, 1], got {}", self.failure_threshold)));
        }
        if self.summary_budget == 0 {
            return Err(ConfigError("summary_budget must be positive".into()));
        }
        if let Some(rl) = self.rate_limit {
            if !(rl.per_second.is_finite() && rl.per_second > 0.0) || rl.burst == 0 {
                return Err(ConfigError("rate_limit needs per_second > 0 and burst >= 1".into()));
            }
        }
        if self.backoff.factor < 1.0 || !self.backoff.factor.is_finite() {
            return Err(ConfigError("backoff.factor must be >= 1".into()));
        }
        if self.mock_script.is_some() && self.backend != BackendChoice::Mock && self.replay_dir.is_none() {
            return Err(ConfigError("mock_script is set but backend is not mock".into()));
        }
        if self.yes_no_prompt.as_deref().is_some_and(|t| t.trim().is_empty()) {
            return Err(ConfigError("yes_no_prompt is empty".into()));
        }
        Ok(())
    }

    /// Digest identifying everything that can change results. Machine-local
    /// settings (cache and replay locations, parallelism, rate limiting) are
    /// left out, so a replay of a recorded run shares its fingerprint.
    pub fn fingerprint(&self, prompts: &PromptSet, mock_script_text: Option<&str>) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("object");
        for k in ["cache_dir", "replay_dir", "parallelism", "rate_limit", "prompt_set_path", "mock_script"] {
            obj.remove(k);
        }
        for ep in ["mm_endpoint", "lm_endpoint"] {
            if let Some(e) = obj.get_mut(ep).and_then(Value::as_object_mut) {
                e.remove("timeout_secs");
                e.remove("api_key_env");
            }
        }
        obj.insert("prompt_set_sha256".into(), Value::String(sha256_hex(prompts.to_file_json().as_bytes())));
        obj.insert(
            "mock_script_sha256".into(),
            mock_script_text.map_or(Value::Null, |t| Value::String(sha256_hex(t.as_bytes()))),
        );
        canonical_digest(&v)
    }
}

#[cfg(test)]
mod tests {
    use truthlens_core::prompts::builtin_prompt_set;

    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn example_file_spells_out_defaults() {
        let example = include_str!("../../../docs/config.example.toml");
        assert_eq!(RunConfig::layered(no_env, Some(example)).unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::layered(no_env, None).unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn file_overrides_env_overrides_default() {
        let env = |k: &str| (k == CACHE_DIR_ENV).then(|| "/env/cache".to_string());
        assert_eq!(RunConfig::layered(env, None).unwrap().cache_dir, PathBuf::from("/env/cache"));
        let cfg = RunConfig::layered(env, Some("cache_dir = \"/file/cache\"")).unwrap();
        assert_eq!(cfg.cache_dir, PathBuf::from("/file/cache"));
    }

    #[test]
    fn partial_endpoint_tables_merge() {
        let text = r#"
            parallelism = 8
            mode = "yes_no"
            backend = "mock"
            [mm_endpoint]
            model_name = "cogvlm"
            api_key_env = "MM_KEY"
            [backoff]
            base = 10
        "#;
        let cfg = RunConfig::layered(no_env, Some(text)).unwrap();
        assert_eq!(cfg.parallelism, 8);
        assert_eq!(cfg.mode, RunMode::YesNo);
        assert_eq!(cfg.mm_endpoint.model_name, "cogvlm");
        assert_eq!(cfg.mm_endpoint.base_url, RunConfig::default().mm_endpoint.base_url);
        assert_eq!(cfg.mm_endpoint.api_key_env.as_deref(), Some("MM_KEY"));
        assert_eq!(cfg.backoff.base.as_millis(), 10);
        assert_eq!(cfg.backoff.factor, 2.0);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::layered(no_env, Some("paralelism = 3")).is_err());
        assert!(RunConfig::layered(no_env, Some("mode = \"fast\"")).is_err());
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.parallelism = 0));
        assert!(bad(|c| c.failure_threshold = 1.5));
        assert!(bad(|c| c.mm_endpoint.base_url = "ftp://x".into()));
        assert!(bad(|c| c.mock_script = Some("m.json".into())));
    }

    #[test]
    fn fingerprint_ignores_local_settings() {
        let prompts = builtin_prompt_set();
        let a = RunConfig::default();
        let mut b = a.clone();
        b.cache_dir = "/elsewhere".into();
        b.replay_dir = Some("/archive".into());
        b.parallelism = 32;
        assert_eq!(a.fingerprint(&prompts, None), b.fingerprint(&prompts, None));
        b.seed = 9;
        assert_ne!(a.fingerprint(&prompts, None), b.fingerprint(&prompts, None));
        assert_ne!(a.fingerprint(&prompts, None), a.fingerprint(&prompts, Some("{}")));
        assert_eq!(a.fingerprint(&prompts, None).len(), 64);
    }
}
