//! Access to multimodal and text-only model endpoints.
//!
//! Every request goes through a [`Gateway`], which bounds in-flight requests
//! and counts calls per kind. Behind it sits one of three backends:
//!
//! * [`LiveBackend`]: chat-completions over HTTP with retries, an optional
//!   token-bucket rate limit and a content-addressed [`ResponseCache`].
//! * [`MockBackend`]: deterministic in-process answers for tests and demos.
//! * [`ReplayBackend`]: answers only from a previously recorded cache
//!   directory and never touches the network.

mod cache;
mod live;
mod mock;
mod rate;
mod replay;
mod retry;

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::future::BoxFuture;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::digest;

pub use cache::{CacheEntry, CacheVerifyReport, ResponseCache};
pub use live::LiveBackend;
pub use mock::{MockBackend, MockRule, MockScript};
pub use rate::RateLimiter;
pub use replay::ReplayBackend;
pub use retry::{execute_with_policy, Backoff, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: HTTP {status}: {body_excerpt}")]
    Protocol { status: u16, body_excerpt: String },
    #[error("model returned an empty reply")]
    EmptyReply,
    #[error("replay archive has no response for key {key}")]
    ReplayMiss { key: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl GatewayError {
    /// Transport failures, HTTP 429 and 5xx are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Protocol { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

fn default_timeout() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_output_tokens() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_max_retries(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: String| Err(GatewayError::InvalidConfig(m));
        match url::Url::parse(&self.base_url) {
            Ok(u) if matches!(u.scheme(), "http" | "https") => {}
            Ok(u) => return invalid(format!("unsupported scheme `{}` in base_url", u.scheme())),
            Err(e) => return invalid(format!("base_url `{}`: {e}", self.base_url)),
        }
        if self.model_name.trim().is_empty() {
            return invalid("model_name is empty".into());
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return invalid(format!("timeout_secs must be > 0, got {}", self.timeout_secs));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid(format!("temperature must be in [0, 2], got {}", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MediaType {
    #[serde(rename = "image/png")]
    Png,
    #[serde(rename = "image/jpeg")]
    Jpeg,
}

impl MediaType {
    pub fn as_mime(self) -> &'static str {
        match self {
            MediaType::Png => "image/png",
            MediaType::Jpeg => "image/jpeg",
        }
    }

    pub fn from_extension(path: &Path) -> Option<MediaType> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(MediaType::Png),
            "jpg" | "jpeg" => Some(MediaType::Jpeg),
            _ => None,
        }
    }
}

/// Raw image bytes as sent to the model, unmodified.
#[derive(Clone, PartialEq, Eq)]
pub struct ImagePayload {
    bytes: Arc<[u8]>,
    media_type: MediaType,
    sha256: String,
}

impl fmt::Debug for ImagePayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImagePayload")
            .field("len", &self.bytes.len())
            .field("media_type", &self.media_type)
            .field("sha256", &self.sha256)
            .finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image is empty")]
    Empty,
    #[error("unsupported image type for {0} (expected .png, .jpg or .jpeg)")]
    UnsupportedType(String),
    #[error("no such file: {0}")]
    NotFound(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ImagePayload {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>, media_type: MediaType) -> Result<Self, ImageError> {
        let bytes: Vec<u8> = bytes.into();
        if bytes.is_empty() {
            return Err(ImageError::Empty);
        }
        let sha256 = digest::sha256_hex(&bytes);
        Ok(ImagePayload { bytes: bytes.into(), media_type, sha256 })
    }

    pub fn from_path(path: &Path) -> Result<Self, ImageError> {
        let display = path.display().to_string();
        let media_type =
            MediaType::from_extension(path).ok_or_else(|| ImageError::UnsupportedType(display.clone()))?;
        let bytes = std::fs::read(path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                ImageError::NotFound(display.clone())
            } else {
                ImageError::Io { path: display.clone(), source }
            }
        })?;
        Self::from_bytes(bytes, media_type)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn media_type(&self) -> MediaType {
        self.media_type
    }

    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    /// `data:<mime>;base64,<payload>` as embedded in the request body.
    pub fn data_url(&self) -> String {
        use base64::Engine;
        format!(
            "data:{};base64,{}",
            self.media_type.as_mime(),
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

/// The fields a response depends on; their canonical JSON digest is the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintFields {
    pub image_sha256: String,
    pub max_output_tokens: u32,
    pub model_name: String,
    pub prompt_text: String,
    pub temperature: f64,
}

impl FingerprintFields {
    pub fn key(&self) -> CacheKey {
        CacheKey(digest::canonical_digest(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Multimodal,
    Text,
}

#[derive(Debug, Clone)]
pub struct ModelQuery {
    endpoint: Arc<EndpointConfig>,
    prompt_text: String,
    image: Option<ImagePayload>,
    prompt_id: Option<String>,
    params_fingerprint: CacheKey,
}

impl ModelQuery {
    pub fn new(endpoint: Arc<EndpointConfig>, prompt_text: impl Into<String>, image: Option<ImagePayload>) -> Self {
        let mut query = ModelQuery {
            endpoint,
            prompt_text: prompt_text.into(),
            image,
            prompt_id: None,
            params_fingerprint: CacheKey(String::new()),
        };
        query.params_fingerprint = query.fingerprint_fields().key();
        query
    }

    pub fn text(endpoint: Arc<EndpointConfig>, prompt_text: impl Into<String>) -> Self {
        Self::new(endpoint, prompt_text, None)
    }

    pub fn multimodal(endpoint: Arc<EndpointConfig>, prompt_text: impl Into<String>, image: ImagePayload) -> Self {
        Self::new(endpoint, prompt_text, Some(image))
    }

    /// Tags the query with the id of the prompt it came from. Not fingerprinted.
    pub fn with_prompt_id(mut self, id: impl Into<String>) -> Self {
        self.prompt_id = Some(id.into());
        self
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    pub fn prompt_text(&self) -> &str {
        &self.prompt_text
    }

    pub fn image(&self) -> Option<&ImagePayload> {
        self.image.as_ref()
    }

    pub fn prompt_id(&self) -> Option<&str> {
        self.prompt_id.as_deref()
    }

    pub fn kind(&self) -> QueryKind {
        if self.image.is_some() {
            QueryKind::Multimodal
        } else {
            QueryKind::Text
        }
    }

    pub fn params_fingerprint(&self) -> &CacheKey {
        &self.params_fingerprint
    }

    pub fn fingerprint_fields(&self) -> FingerprintFields {
        FingerprintFields {
            image_sha256: self.image.as_ref().map_or_else(|| "none".to_string(), |i| i.sha256.clone()),
            max_output_tokens: self.endpoint.max_output_tokens,
            model_name: self.endpoint.model_name.clone(),
            prompt_text: self.prompt_text.clone(),
            temperature: self.endpoint.temperature,
        }
    }
}

/// 64-hex digest over the canonical serialization of the query's fingerprinted fields.
pub fn cache_key(query: &ModelQuery) -> CacheKey {
    query.params_fingerprint.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Live,
    Mock,
    Replay,
}

/// A model answer. `cache_hit` is set when a live backend answered from its
/// cache and always for replay backends; mock replies never hit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReply {
    pub text: String,
    pub token_usage: Option<TokenUsage>,
    pub latency: Duration,
    pub backend: BackendKind,
    pub cache_hit: bool,
}

pub trait ModelBackend: Send + Sync {
    fn complete<'a>(&'a self, query: &'a ModelQuery) -> BoxFuture<'a, Result<ModelReply, GatewayError>>;

    fn kind(&self) -> BackendKind;

    /// Outbound HTTP attempts made so far.
    fn network_attempts(&self) -> u64 {
        0
    }
}

#[derive(Debug, Default)]
struct Counters {
    multimodal: AtomicU64,
    text: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CallStats {
    pub multimodal_calls: u64,
    pub text_calls: u64,
    pub network_attempts: u64,
}

/// Shared handle to a backend. Cloning is cheap and clones share limits and counters.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
    permits: Arc<Semaphore>,
    counters: Arc<Counters>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.kind())
            .field("available_permits", &self.permits.available_permits())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl ModelBackend + 'static, parallelism: usize) -> Self {
        Self::from_arc(Arc::new(backend), parallelism)
    }

    pub fn from_arc(backend: Arc<dyn ModelBackend>, parallelism: usize) -> Self {
        Gateway {
            backend,
            permits: Arc::new(Semaphore::new(parallelism.max(1))),
            counters: Arc::default(),
        }
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn stats(&self) -> CallStats {
        CallStats {
            multimodal_calls: self.counters.multimodal.load(Ordering::SeqCst),
            text_calls: self.counters.text.load(Ordering::SeqCst),
            network_attempts: self.backend.network_attempts(),
        }
    }

    pub async fn query_multimodal(&self, query: &ModelQuery) -> Result<ModelReply, GatewayError> {
        if query.image.is_none() {
            return Err(GatewayError::InvalidQuery("multimodal query without an image".into()));
        }
        self.dispatch(query, &self.counters.multimodal).await
    }

    pub async fn query_text(&self, query: &ModelQuery) -> Result<ModelReply, GatewayError> {
        if query.image.is_some() {
            return Err(GatewayError::InvalidQuery("text query carries an image".into()));
        }
        self.dispatch(query, &self.counters.text).await
    }

    async fn dispatch(&self, query: &ModelQuery, counter: &AtomicU64) -> Result<ModelReply, GatewayError> {
        if query.prompt_text.trim().is_empty() {
            return Err(GatewayError::InvalidQuery("prompt_text is empty".into()));
        }
        counter.fetch_add(1, Ordering::SeqCst);
        let _permit = self.permits.acquire().await.expect("gateway semaphore is never closed");
        let reply = self.backend.complete(query).await?;
        if reply.text.trim().is_empty() {
            return Err(GatewayError::EmptyReply);
        }
        Ok(reply)
    }
}
