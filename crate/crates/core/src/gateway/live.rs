use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use futures::future::BoxFuture;
use serde_json::{json, Value};

use super::{
    execute_with_policy, Backoff, BackendKind, CacheEntry, GatewayError, ModelBackend, ModelQuery, ModelReply,
    RateLimiter, ResponseCache, RetryPolicy, TokenUsage,
};

const EXCERPT_CHARS: usize = 240;

/// Chat-completions client. Consults the cache before the network and
/// records every fresh reply into it.
pub struct LiveBackend {
    client: reqwest::Client,
    backoff: Backoff,
    cache: Option<ResponseCache>,
    limiter: Option<RateLimiter>,
    attempts: AtomicU64,
}

impl LiveBackend {
    pub fn new(backoff: Backoff) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::InvalidConfig(format!("http client: {e}")))?;
        Ok(LiveBackend { client, backoff, cache: None, limiter: None, attempts: AtomicU64::new(0) })
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_rate_limit(mut self, limiter: RateLimiter) -> Self {
        self.limiter = Some(limiter);
        self
    }

    /// Sends `query` with retries per `policy`, bypassing the cache.
    pub async fn execute_with_policy(
        &self,
        query: &ModelQuery,
        policy: &RetryPolicy,
    ) -> Result<(String, Option<TokenUsage>), GatewayError> {
        execute_with_policy(policy, |_| self.attempt(query)).await
    }

    async fn attempt(&self, query: &ModelQuery) -> Result<(String, Option<TokenUsage>), GatewayError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire().await;
        }
        let endpoint = query.endpoint();
        let mut request = self
            .client
            .post(endpoint.completions_url())
            .timeout(Duration::from_secs_f64(endpoint.timeout_secs))
            .json(&request_body(query));
        if let Some(var) = &endpoint.api_key_env {
            let key = std::env::var(var).map_err(|_| GatewayError::MissingCredential(var.clone()))?;
            request = request.bearer_auth(key);
        }

        self.attempts.fetch_add(1, Ordering::SeqCst);
        let response = request.send().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.text().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Protocol { status, body_excerpt: excerpt(&body) });
        }
        parse_completion(status, &body)
    }
}

/// The chat-completions request body. Text-only queries send plain string content.
pub(crate) fn request_body(query: &ModelQuery) -> Value {
    let endpoint = query.endpoint();
    let content = match query.image() {
        Some(image) => json!([
            {"type": "text", "text": query.prompt_text()},
            {"type": "image_url", "image_url": {"url": image.data_url()}}
        ]),
        None => json!(query.prompt_text()),
    };
    json!({
        "model": endpoint.model_name,
        "messages": [{"role": "user", "content": content}],
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_output_tokens,
    })
}

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_CHARS).collect()
}

pub(crate) fn parse_completion(status: u16, body: &str) -> Result<(String, Option<TokenUsage>), GatewayError> {
    let protocol = |why: &str| GatewayError::Protocol { status, body_excerpt: format!("{why}: {}", excerpt(body)) };
    let value: Value = serde_json::from_str(body).map_err(|_| protocol("malformed JSON"))?;
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| protocol("missing choices[0].message.content"))?;
    let text = match content {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join(""),
        _ => return Err(protocol("unexpected content type")),
    };
    if text.trim().is_empty() {
        return Err(GatewayError::EmptyReply);
    }
    let usage = value.get("usage").and_then(|u| {
        Some(TokenUsage { input: u["prompt_tokens"].as_u64()?, output: u["completion_tokens"].as_u64()? })
    });
    Ok((text, usage))
}

impl ModelBackend for LiveBackend {
    fn complete<'a>(&'a self, query: &'a ModelQuery) -> BoxFuture<'a, Result<ModelReply, GatewayError>> {
        Box::pin(async move {
            let start = Instant::now();
            let key = query.params_fingerprint();
            if let Some(cache) = &self.cache {
                if let Some(entry) = cache.get(key)? {
                    return Ok(ModelReply {
                        text: entry.reply_text,
                        token_usage: entry.token_usage,
                        latency: start.elapsed(),
                        backend: BackendKind::Live,
                        cache_hit: true,
                    });
                }
            }
            let policy = RetryPolicy::new(query.endpoint().max_retries, self.backoff);
            let (text, token_usage) = self.execute_with_policy(query, &policy).await?;
            if let Some(cache) = &self.cache {
                cache.put(&CacheEntry::for_query(query, text.clone(), token_usage))?;
            }
            Ok(ModelReply { text, token_usage, latency: start.elapsed(), backend: BackendKind::Live, cache_hit: false })
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn network_attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }
}
