use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::BoxFuture;
use serde::{Deserialize, Serialize};

use super::{BackendKind, GatewayError, ModelBackend, ModelQuery, ModelReply, QueryKind};
use crate::digest;

/// Neutral-sounding observations; each carries exactly one real/fake cue word
/// so the single-question baseline can map them.
const OBSERVATION_POOL: [&str; 6] = [
    "The lighting is soft and consistent with a real photograph taken indoors.",
    "Skin texture shows natural pores and small blemishes, typical of an authentic portrait.",
    "The surface looks unnaturally smooth and uniform, suggesting a synthetic image.",
    "Proportions are plausible and nothing contradicts an ordinary photograph.",
    "Edges around the hairline blur oddly, which hints the image may be manipulated.",
    "Highlights repeat in a regular pattern that looks ai-generated.",
];

const VERDICT_POOL: [&str; 4] = [
    "VERDICT: REAL\nCONFIDENCE: 72\nREASONING: The observations describe consistent lighting and natural skin texture.",
    "VERDICT: FAKE\nCONFIDENCE: 81\nREASONING: Several observations mention unnaturally smooth skin and inconsistent highlights.",
    "VERDICT: REAL\nCONFIDENCE: 64\nREASONING: No observation points to a clear generation artifact.",
    "VERDICT: FAKE\nCONFIDENCE: 58\nREASONING: Background blur and edge artifacts suggest manipulation.",
];

/// A declarative match-and-reply rule. All present conditions must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<QueryKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    /// Matches when the query image digest is one of these.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    /// Fail with this HTTP status instead of replying.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_status: Option<u16>,
}

impl MockRule {
    fn matches(&self, query: &ModelQuery) -> bool {
        self.kind.is_none_or(|k| k == query.kind())
            && self.prompt_id.as_deref().is_none_or(|id| query.prompt_id() == Some(id))
            && self.prompt_contains.as_deref().is_none_or(|s| query.prompt_text().contains(s))
            && self.image_sha256.as_ref().is_none_or(|set| {
                query.image().is_some_and(|img| set.iter().any(|d| d == img.sha256()))
            })
    }

    fn outcome(&self) -> Result<String, GatewayError> {
        match (&self.reply, self.fail_status) {
            (_, Some(status)) => Err(GatewayError::Protocol { status, body_excerpt: "mock failure".into() }),
            (Some(reply), None) => Ok(reply.clone()),
            (None, None) => Err(GatewayError::EmptyReply),
        }
    }
}

/// On-disk mock script: fingerprint fixtures plus ordered rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub fixtures: HashMap<String, String>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidConfig(format!("mock script {}: {e}", path.display())))?;
        serde_json::from_str(&data)
            .map_err(|e| GatewayError::InvalidConfig(format!("mock script {}: {e}", path.display())))
    }
}

type Responder = dyn Fn(&ModelQuery) -> Option<Result<String, GatewayError>> + Send + Sync;
type Delay = dyn Fn(&ModelQuery) -> Duration + Send + Sync;

/// Deterministic in-process backend.
///
/// Lookup order: programmatic responder, fingerprint fixtures, rules, then a
/// canned answer chosen from a fixed pool by hashing the image digest and
/// prompt id, so every query gets a stable reply without any setup.
#[derive(Clone, Default)]
pub struct MockBackend {
    responder: Option<Arc<Responder>>,
    script: MockScript,
    delay: Option<Arc<Delay>>,
}

impl fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockBackend")
            .field("fixtures", &self.script.fixtures.len())
            .field("rules", &self.script.rules.len())
            .field("responder", &self.responder.is_some())
            .finish()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: MockScript) -> Self {
        MockBackend { script, ..Self::default() }
    }

    pub fn with_fixture(mut self, fingerprint: impl Into<String>, reply: impl Into<String>) -> Self {
        self.script.fixtures.insert(fingerprint.into(), reply.into());
        self
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.script.rules.push(rule);
        self
    }

    /// Consulted first; returning `None` falls through to fixtures and rules.
    pub fn with_responder(
        mut self,
        f: impl Fn(&ModelQuery) -> Option<Result<String, GatewayError>> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Arc::new(f));
        self
    }

    /// Artificial per-query latency, e.g. to permute completion order.
    pub fn with_delay(mut self, f: impl Fn(&ModelQuery) -> Duration + Send + Sync + 'static) -> Self {
        self.delay = Some(Arc::new(f));
        self
    }

    pub fn resolve(&self, query: &ModelQuery) -> Result<String, GatewayError> {
        if let Some(outcome) = self.responder.as_ref().and_then(|f| f(query)) {
            return outcome;
        }
        if let Some(reply) = self.script.fixtures.get(query.params_fingerprint().as_str()) {
            return Ok(reply.clone());
        }
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(query)) {
            return rule.outcome();
        }
        Ok(canned_reply(query).to_string())
    }
}

fn leading_u64(hex_digest: &str) -> u64 {
    u64::from_str_radix(&hex_digest[..16], 16).expect("hex digest")
}

/// The no-fixture answer for `query`.
pub(crate) fn canned_reply(query: &ModelQuery) -> &'static str {
    let image = query.image().map_or_else(|| digest::sha256_hex(b"none"), |i| i.sha256().to_string());
    let tag = query.prompt_id().unwrap_or(query.prompt_text());
    let mix = leading_u64(&image) ^ leading_u64(&digest::sha256_hex(tag.as_bytes()));
    match query.kind() {
        QueryKind::Multimodal => OBSERVATION_POOL[(mix % OBSERVATION_POOL.len() as u64) as usize],
        QueryKind::Text => VERDICT_POOL[(mix % VERDICT_POOL.len() as u64) as usize],
    }
}

impl ModelBackend for MockBackend {
    fn complete<'a>(&'a self, query: &'a ModelQuery) -> BoxFuture<'a, Result<ModelReply, GatewayError>> {
        Box::pin(async move {
            let start = Instant::now();
            if let Some(delay) = &self.delay {
                tokio::time::sleep(delay(query)).await;
            }
            let text = self.resolve(query)?;
            Ok(ModelReply { text, token_usage: None, latency: start.elapsed(), backend: BackendKind::Mock, cache_hit: false })
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{cache_key, EndpointConfig, Gateway, ImagePayload, MediaType};

    fn ep() -> Arc<EndpointConfig> {
        Arc::new(EndpointConfig::new("http://mock/v1", "mock-model"))
    }

    fn image(bytes: &[u8]) -> ImagePayload {
        ImagePayload::from_bytes(bytes.to_vec(), MediaType::Png).unwrap()
    }

    #[tokio::test]
    async fn fixture_echo() {
        let q = ModelQuery::multimodal(ep(), "Describe the lighting.", image(b"img"));
        let mock = MockBackend::new().with_fixture(cache_key(&q).as_str(), "The lighting appears natural.");
        let gw = Gateway::new(mock, 1);
        let reply = gw.query_multimodal(&q).await.unwrap();
        assert_eq!(reply.text, "The lighting appears natural.");
        assert_eq!(reply.backend, BackendKind::Mock);
        assert!(!reply.cache_hit);

        let t = ModelQuery::text(ep(), "summary");
        let gw = Gateway::new(MockBackend::new().with_fixture(cache_key(&t).as_str(), "VERDICT: FAKE"), 1);
        assert_eq!(gw.query_text(&t).await.unwrap().text, "VERDICT: FAKE");
        assert_eq!(gw.stats().text_calls, 1);
    }

    #[test]
    fn canned_answers_are_deterministic_and_vary() {
        let mock = MockBackend::new();
        let a = ModelQuery::multimodal(ep(), "p", image(b"one")).with_prompt_id("eyes_and_pupils");
        assert_eq!(mock.resolve(&a).unwrap(), mock.resolve(&a.clone()).unwrap());
        let distinct: std::collections::HashSet<_> = (0u8..32)
            .map(|i| mock.resolve(&ModelQuery::multimodal(ep(), "p", image(&[i])).with_prompt_id("x")).unwrap())
            .collect();
        assert!(distinct.len() > 1);
        let verdict = mock.resolve(&ModelQuery::text(ep(), "any summary")).unwrap();
        assert!(verdict.starts_with("VERDICT: "));
    }

    #[test]
    fn rules_match_in_order() {
        let img = image(b"fake-1");
        let mock = MockBackend::new()
            .with_rule(MockRule {
                kind: Some(QueryKind::Multimodal),
                prompt_id: Some("eyes_and_pupils".into()),
                image_sha256: Some(vec![img.sha256().to_string()]),
                reply: Some("misshapen pupils".into()),
                ..MockRule::default()
            })
            .with_rule(MockRule { prompt_contains: Some("boom".into()), fail_status: Some(503), ..MockRule::default() })
            .with_rule(MockRule { kind: Some(QueryKind::Multimodal), reply: Some("fine".into()), ..MockRule::default() });
        let eyes = ModelQuery::multimodal(ep(), "eyes?", img.clone()).with_prompt_id("eyes_and_pupils");
        assert_eq!(mock.resolve(&eyes).unwrap(), "misshapen pupils");
        let other = ModelQuery::multimodal(ep(), "eyes?", image(b"real-1")).with_prompt_id("eyes_and_pupils");
        assert_eq!(mock.resolve(&other).unwrap(), "fine");
        let boom = ModelQuery::multimodal(ep(), "boom", img);
        assert!(matches!(mock.resolve(&boom), Err(GatewayError::Protocol { status: 503, .. })));
    }

    #[test]
    fn script_parses_from_json() {
        let script: MockScript = serde_json::from_str(
            r#"{"fixtures": {"abc": "x"}, "rules": [{"kind": "text", "prompt_contains": "SIGNAL", "reply": "VERDICT: FAKE"}]}"#,
        )
        .unwrap();
        assert_eq!(script.rules[0].kind, Some(QueryKind::Text));
        assert!(serde_json::from_str::<MockScript>(r#"{"rules": [{"bogus": 1}]}"#).is_err());
    }
}
