use std::path::PathBuf;
use std::time::Instant;

use futures::future::BoxFuture;

use super::{BackendKind, GatewayError, ModelBackend, ModelQuery, ModelReply, ResponseCache};

/// Serves replies from a recorded cache directory, opened read-only.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    archive: ResponseCache,
}

impl ReplayBackend {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        Ok(ReplayBackend { archive: ResponseCache::open_read_only(dir)? })
    }
}

impl ModelBackend for ReplayBackend {
    fn complete<'a>(&'a self, query: &'a ModelQuery) -> BoxFuture<'a, Result<ModelReply, GatewayError>> {
        Box::pin(async move {
            let start = Instant::now();
            let key = query.params_fingerprint();
            let entry = self
                .archive
                .get(key)?
                .ok_or_else(|| GatewayError::ReplayMiss { key: key.to_string() })?;
            Ok(ModelReply {
                text: entry.reply_text,
                token_usage: entry.token_usage,
                latency: start.elapsed(),
                backend: BackendKind::Replay,
                cache_hit: true,
            })
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::{CacheEntry, EndpointConfig, Gateway};

    #[tokio::test]
    async fn hit_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let ep = Arc::new(EndpointConfig::new("http://127.0.0.1:9/v1", "m"));
        let recorded = ModelQuery::text(ep.clone(), "recorded");
        ResponseCache::open(dir.path())
            .unwrap()
            .put(&CacheEntry::for_query(&recorded, "VERDICT: FAKE", None))
            .unwrap();

        let gw = Gateway::new(ReplayBackend::open(dir.path()).unwrap(), 1);
        let reply = gw.query_text(&recorded).await.unwrap();
        assert_eq!(reply.text, "VERDICT: FAKE");
        assert_eq!(reply.backend, BackendKind::Replay);
        assert!(reply.cache_hit);

        let missing = ModelQuery::text(ep, "never recorded");
        assert!(matches!(gw.query_text(&missing).await, Err(GatewayError::ReplayMiss { .. })));
        assert_eq!(gw.stats().network_attempts, 0);
    }
}
