//! The detection pipeline: interrogate, aggregate, decide.

mod summary;
mod verdict;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::gateway::{EndpointConfig, Gateway, GatewayError, ImagePayload, ModelQuery};
use crate::prompts::{yes_no_prompt, Prompt, PromptCategory, PromptSet};
use crate::Label;

pub use summary::{aggregate, aggregate_with_budget, SummaryBudget, DEFAULT_SUMMARY_BUDGET, SUMMARY_HEADER, TRUNCATION_MARK};
pub use verdict::{
    format_verdict, map_yes_no_reply, parse_verdict, parse_verdict_strict, NoVerdictToken, Verdict, FALLBACK_CONFIDENCE,
};

/// Instruction sent to the decision model; `{SUMMARY}` is replaced by the summary text.
pub const DECISION_TEMPLATE: &str = "You are a forensic image analyst. Below are observations about one face image, produced by a vision model. Based only on these observations, decide whether the image is REAL or FAKE.\n\n{SUMMARY}\n\nRespond in exactly this format:\nVERDICT: REAL or FAKE\nCONFIDENCE: an integer 0-100\nREASONING: one short paragraph citing the observations.";

/// Appended to the decision prompt when the first reply did not follow the format.
pub const FORMAT_REMINDER: &str = "\n\nYour previous reply did not follow the required format. Answer in the exact format, with nothing else:\nVERDICT: REAL or FAKE\nCONFIDENCE: an integer 0-100\nREASONING: one short paragraph citing the observations.";

pub fn decision_prompt(summary: &StructuredSummary) -> String {
    DECISION_TEMPLATE.replace("{SUMMARY}", &summary.text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub prompt_id: String,
    pub category: PromptCategory,
    pub answer_text: String,
    /// Set when the query failed and the failure was skipped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

/// Answers for one image, one per prompt, in prompt-ordinal order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub image_sha256: String,
    pub prompt_set_version: String,
    pub answers: Vec<Answer>,
}

impl AnswerSet {
    pub fn failed_count(&self) -> usize {
        self.answers.iter().filter(|a| a.failed).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarySource {
    pub image_sha256: String,
    pub prompt_set_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredSummary {
    pub text: String,
    pub source: SummarySource,
    /// Length of `text` in characters.
    pub char_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    FullPipeline,
    YesNo,
    SingleCategory(PromptCategory),
}

impl DetectionMode {
    /// Whether the mode yields a ranking score usable for ROC analysis.
    pub fn has_score(&self) -> bool {
        !matches!(self, DetectionMode::YesNo)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub interrogate_ms: f64,
    pub aggregate_ms: f64,
    pub decide_ms: f64,
    pub total_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub sample_id: String,
    pub image_sha256: String,
    pub verdict: Verdict,
    pub fake_score: f64,
    pub answer_set: AnswerSet,
    pub summary: StructuredSummary,
    pub mode: DetectionMode,
    /// Number of decision-model calls (2 when the format reminder was needed).
    pub decision_calls: u32,
    pub timings: StageTimings,
}

impl DetectionRecord {
    /// Equality on everything except `timings`.
    pub fn same_outcome(&self, other: &DetectionRecord) -> bool {
        let mut a = self.clone();
        a.timings = other.timings;
        &a == other
    }
}

/// `confidence/100` for Fake verdicts, `1 - confidence/100` for Real ones.
pub fn fake_score(label: Label, confidence: u8) -> f64 {
    match label {
        Label::Fake => f64::from(confidence) / 100.0,
        Label::Real => f64::from(100 - confidence.min(100)) / 100.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Interrogate,
    Aggregate,
    Decide,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Interrogate => "interrogate",
            Stage::Aggregate => "aggregate",
            Stage::Decide => "decide",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("interrogate stage: prompt set is empty")]
    EmptyPromptSet,
    #[error("interrogate stage: prompt `{prompt_id}`: {source}")]
    Interrogate {
        prompt_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("interrogate stage: {0}")]
    NoVerdictToken(#[source] NoVerdictToken),
    #[error("aggregate stage: summary is empty")]
    EmptySummary,
    #[error("decide stage: {0}")]
    Decide(#[source] GatewayError),
    #[error("decide stage: unparseable verdict: {raw_reply:?}")]
    UnparseableVerdict { raw_reply: String },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::EmptyPromptSet | PipelineError::Interrogate { .. } | PipelineError::NoVerdictToken(_) => {
                Stage::Interrogate
            }
            PipelineError::EmptySummary => Stage::Aggregate,
            PipelineError::Decide(_) | PipelineError::UnparseableVerdict { .. } => Stage::Decide,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOptions {
    /// Record failed prompts as empty flagged answers instead of aborting.
    pub skip_failed_prompts: bool,
    pub summary_budget: SummaryBudget,
    pub yes_no_prompt: Prompt,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        DetectorOptions {
            skip_failed_prompts: false,
            summary_budget: SummaryBudget::default(),
            yes_no_prompt: yes_no_prompt(),
        }
    }
}

/// Runs the pipeline against a multimodal and a decision gateway.
#[derive(Debug, Clone)]
pub struct Detector {
    mm: Gateway,
    lm: Gateway,
    mm_endpoint: Arc<EndpointConfig>,
    lm_endpoint: Arc<EndpointConfig>,
    options: DetectorOptions,
}

impl Detector {
    pub fn new(
        mm: Gateway,
        mm_endpoint: EndpointConfig,
        lm: Gateway,
        lm_endpoint: EndpointConfig,
        options: DetectorOptions,
    ) -> Self {
        Detector { mm, lm, mm_endpoint: Arc::new(mm_endpoint), lm_endpoint: Arc::new(lm_endpoint), options }
    }

    pub fn options(&self) -> &DetectorOptions {
        &self.options
    }

    pub fn multimodal_gateway(&self) -> &Gateway {
        &self.mm
    }

    pub fn decision_gateway(&self) -> &Gateway {
        &self.lm
    }

    /// Queries every prompt concurrently; answers come back in ordinal order.
    /// When several prompts fail, the error names the lowest-ordinal one.
    pub async fn interrogate(&self, image: &ImagePayload, prompts: &PromptSet) -> Result<AnswerSet, PipelineError> {
        if prompts.is_empty() {
            return Err(PipelineError::EmptyPromptSet);
        }
        let replies = futures::future::join_all(prompts.prompts.iter().map(|p| {
            let query = ModelQuery::multimodal(self.mm_endpoint.clone(), p.text.clone(), image.clone())
                .with_prompt_id(p.id.clone());
            async move { self.mm.query_multimodal(&query).await }
        }))
        .await;

        let mut answers = Vec::with_capacity(replies.len());
        for (prompt, reply) in prompts.prompts.iter().zip(replies) {
            let (answer_text, failed) = match reply {
                Ok(r) => (r.text.trim().to_string(), false),
                Err(e) if self.options.skip_failed_prompts => {
                    tracing::warn!(prompt = %prompt.id, error = %e, "skipping failed prompt");
                    (String::new(), true)
                }
                Err(source) => return Err(PipelineError::Interrogate { prompt_id: prompt.id.clone(), source }),
            };
            answers.push(Answer {
                prompt_id: prompt.id.clone(),
                category: prompt.category.clone(),
                answer_text,
                failed,
            });
        }
        Ok(AnswerSet {
            image_sha256: image.sha256().to_string(),
            prompt_set_version: prompts.version.clone(),
            answers,
        })
    }

    pub fn aggregate(&self, answer_set: &AnswerSet) -> StructuredSummary {
        aggregate_with_budget(answer_set, self.options.summary_budget)
    }

    /// Asks the decision model for a verdict. A reply outside the labelled
    /// grammar triggers one retry with a format reminder; if that also fails
    /// the grammar, the bare-token fallback is tried on the retry reply, then
    /// on the first reply. Returns the verdict and the number of calls made.
    pub async fn decide(&self, summary: &StructuredSummary) -> Result<(Verdict, u32), PipelineError> {
        if summary.text.trim().is_empty() {
            return Err(PipelineError::EmptySummary);
        }
        let prompt = decision_prompt(summary);
        let first = self.ask_decision(prompt.clone()).await?;
        if let Some(v) = parse_verdict_strict(&first) {
            return Ok((v, 1));
        }
        tracing::debug!("decision reply off-format, retrying with reminder");
        let second = self.ask_decision(prompt + FORMAT_REMINDER).await?;
        parse_verdict(&second)
            .or_else(|_| parse_verdict(&first))
            .map(|v| (v, 2))
            .map_err(|_| PipelineError::UnparseableVerdict { raw_reply: second })
    }

    async fn ask_decision(&self, prompt: String) -> Result<String, PipelineError> {
        let query = ModelQuery::text(self.lm_endpoint.clone(), prompt);
        self.lm.query_text(&query).await.map(|r| r.text).map_err(PipelineError::Decide)
    }

    /// Full pipeline over `prompts`.
    pub async fn classify(
        &self,
        sample_id: &str,
        image: &ImagePayload,
        prompts: &PromptSet,
    ) -> Result<DetectionRecord, PipelineError> {
        self.classify_with_mode(sample_id, image, prompts, DetectionMode::FullPipeline).await
    }

    /// Like [`classify`](Self::classify) but tags the record with `mode`
    /// (used by the per-category ablation).
    pub async fn classify_with_mode(
        &self,
        sample_id: &str,
        image: &ImagePayload,
        prompts: &PromptSet,
        mode: DetectionMode,
    ) -> Result<DetectionRecord, PipelineError> {
        if mode == DetectionMode::YesNo {
            return self.classify_yes_no(sample_id, image).await;
        }
        let start = Instant::now();
        let answer_set = self.interrogate(image, prompts).await?;
        let interrogated = Instant::now();
        let summary = self.aggregate(&answer_set);
        let aggregated = Instant::now();
        let (verdict, decision_calls) = self.decide(&summary).await?;
        let done = Instant::now();

        Ok(DetectionRecord {
            sample_id: sample_id.to_string(),
            image_sha256: image.sha256().to_string(),
            fake_score: fake_score(verdict.label, verdict.confidence),
            verdict,
            answer_set,
            summary,
            mode,
            decision_calls,
            timings: StageTimings {
                interrogate_ms: ms(interrogated - start),
                aggregate_ms: ms(aggregated - interrogated),
                decide_ms: ms(done - aggregated),
                total_ms: ms(done - start),
            },
        })
    }

    /// Single-question baseline: one multimodal call, no summary model.
    pub async fn classify_yes_no(&self, sample_id: &str, image: &ImagePayload) -> Result<DetectionRecord, PipelineError> {
        let start = Instant::now();
        let prompt = &self.options.yes_no_prompt;
        let query = ModelQuery::multimodal(self.mm_endpoint.clone(), prompt.text.clone(), image.clone())
            .with_prompt_id(prompt.id.clone());
        let reply = self
            .mm
            .query_multimodal(&query)
            .await
            .map_err(|source| PipelineError::Interrogate { prompt_id: prompt.id.clone(), source })?;
        let raw = reply.text.trim().to_string();
        let label = map_yes_no_reply(&raw)
            .ok_or_else(|| PipelineError::NoVerdictToken(NoVerdictToken { raw: raw.clone() }))?;
        let interrogated = Instant::now();

        let answer_set = AnswerSet {
            image_sha256: image.sha256().to_string(),
            prompt_set_version: format!("yes_no:{}", crate::digest::sha256_hex(prompt.text.as_bytes())[..12].to_owned()),
            answers: vec![Answer {
                prompt_id: prompt.id.clone(),
                category: prompt.category.clone(),
                answer_text: raw.clone(),
                failed: false,
            }],
        };
        let summary = self.aggregate(&answer_set);
        let done = Instant::now();
        let verdict = Verdict { label, confidence: FALLBACK_CONFIDENCE, rationale: raw, raw_reply: reply.text };
        Ok(DetectionRecord {
            sample_id: sample_id.to_string(),
            image_sha256: image.sha256().to_string(),
            fake_score: fake_score(label, verdict.confidence),
            verdict,
            answer_set,
            summary,
            mode: DetectionMode::YesNo,
            decision_calls: 0,
            timings: StageTimings {
                interrogate_ms: ms(interrogated - start),
                aggregate_ms: ms(done - interrogated),
                decide_ms: 0.0,
                total_ms: ms(done - start),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::time::Duration;

    use super::*;
    use crate::gateway::{MediaType, MockBackend, QueryKind};
    use crate::prompts::{builtin_prompt_set, select_categories};

    fn endpoint(name: &str) -> EndpointConfig {
        EndpointConfig::new("http://mock/v1", name)
    }

    fn detector(mm: MockBackend, lm: MockBackend, options: DetectorOptions) -> Detector {
        Detector::new(Gateway::new(mm, 4), endpoint("vlm"), Gateway::new(lm, 4), endpoint("llm"), options)
    }

    fn image() -> ImagePayload {
        ImagePayload::from_bytes(b"\x89PNG fixture".to_vec(), MediaType::Png).unwrap()
    }

    fn echo_prompt_id() -> MockBackend {
        MockBackend::new().with_responder(|q| Some(Ok(format!("  answer for {}  ", q.prompt_id().unwrap()))))
    }

    fn constant_lm(reply: &'static str) -> MockBackend {
        MockBackend::new().with_responder(move |_| Some(Ok(reply.to_string())))
    }

    #[test]
    fn fake_score_follows_label() {
        assert_eq!(fake_score(Label::Fake, 87), 0.87);
        assert_eq!(fake_score(Label::Real, 87), 0.13);
        assert_eq!(fake_score(Label::Real, 0), 1.0);
        assert_eq!(fake_score(Label::Fake, 50), 0.5);
    }

    #[tokio::test]
    async fn interrogate_orders_and_trims() {
        let d = detector(echo_prompt_id(), MockBackend::new(), DetectorOptions::default());
        let set = builtin_prompt_set();
        let answers = d.interrogate(&image(), &set).await.unwrap();
        assert_eq!(answers.answers.len(), 9);
        for (a, p) in answers.answers.iter().zip(&set.prompts) {
            assert_eq!(a.prompt_id, p.id);
            assert_eq!(a.answer_text, format!("answer for {}", p.id));
        }
        let single = select_categories(&set, &[PromptCategory::FacialHair]).unwrap();
        assert_eq!(d.interrogate(&image(), &single).await.unwrap().answers.len(), 1);
    }

    #[tokio::test]
    async fn interrogate_is_order_stable_under_reverse_completion() {
        // later ordinals finish first
        let mm = echo_prompt_id().with_delay(|q| {
            let ord = builtin_prompt_set().get(q.prompt_id().unwrap()).unwrap().ordinal;
            Duration::from_millis(u64::from(10 - ord) * 8)
        });
        let finished = Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = finished.clone();
        let mm = mm.with_responder(move |q| {
            log.lock().unwrap().push(q.prompt_id().unwrap().to_string());
            Some(Ok(format!("answer for {}", q.prompt_id().unwrap())))
        });
        let d = Detector::new(Gateway::new(mm, 9), endpoint("vlm"), Gateway::new(MockBackend::new(), 1), endpoint("llm"), DetectorOptions::default());
        let set = builtin_prompt_set();
        let answers = d.interrogate(&image(), &set).await.unwrap();
        let order: Vec<_> = finished.lock().unwrap().clone();
        let expected_reverse: Vec<_> = set.prompts.iter().rev().map(|p| p.id.clone()).collect();
        assert_eq!(order, expected_reverse);
        let ids: Vec<_> = answers.answers.iter().map(|a| a.prompt_id.clone()).collect();
        assert_eq!(ids, set.prompts.iter().map(|p| p.id.clone()).collect::<Vec<_>>());
    }

    fn fail_symmetry() -> MockBackend {
        MockBackend::new().with_responder(|q| {
            Some(if q.prompt_id() == Some("symmetry_and_proportions") {
                Err(GatewayError::Protocol { status: 500, body_excerpt: "boom".into() })
            } else {
                Ok("fine".into())
            })
        })
    }

    #[tokio::test]
    async fn failing_prompt_aborts_by_default() {
        let d = detector(fail_symmetry(), MockBackend::new(), DetectorOptions::default());
        match d.interrogate(&image(), &builtin_prompt_set()).await {
            Err(e @ PipelineError::Interrogate { .. }) => {
                assert!(e.to_string().contains("symmetry_and_proportions"));
                assert_eq!(e.stage(), Stage::Interrogate);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn failing_prompt_skipped_when_configured() {
        let options = DetectorOptions { skip_failed_prompts: true, ..DetectorOptions::default() };
        let d = detector(fail_symmetry(), MockBackend::new(), options);
        let answers = d.interrogate(&image(), &builtin_prompt_set()).await.unwrap();
        assert_eq!(answers.answers.len(), 9);
        assert_eq!(answers.failed_count(), 1);
        assert!(answers.answers[2].failed);
        assert_eq!(answers.answers[2].answer_text, "");
    }

    #[tokio::test]
    async fn decide_first_try() {
        let d = detector(echo_prompt_id(), constant_lm("VERDICT: FAKE\nCONFIDENCE: 87\nREASONING: waxy skin texture"), DetectorOptions::default());
        let answers = d.interrogate(&image(), &builtin_prompt_set()).await.unwrap();
        let (v, calls) = d.decide(&d.aggregate(&answers)).await.unwrap();
        assert_eq!((v.label, v.confidence, v.rationale.as_str(), calls), (Label::Fake, 87, "waxy skin texture", 1));
    }

    #[tokio::test]
    async fn decide_retries_once_with_reminder() {
        let lm = MockBackend::new().with_responder(|q| {
            Some(Ok(if q.prompt_text().ends_with(FORMAT_REMINDER) {
                "VERDICT: REAL\nCONFIDENCE: 60\nREASONING: consistent lighting".to_string()
            } else {
                "the image is probably real".to_string()
            }))
        });
        let d = detector(echo_prompt_id(), lm, DetectorOptions::default());
        let answers = d.interrogate(&image(), &builtin_prompt_set()).await.unwrap();
        let (v, calls) = d.decide(&d.aggregate(&answers)).await.unwrap();
        assert_eq!((v.label, v.confidence, calls), (Label::Real, 60, 2));
        assert_eq!(d.decision_gateway().stats().text_calls, 2);
    }

    #[tokio::test]
    async fn decide_gives_up_after_two_unparseable_replies() {
        let d = detector(echo_prompt_id(), constant_lm("I cannot determine this."), DetectorOptions::default());
        let answers = d.interrogate(&image(), &builtin_prompt_set()).await.unwrap();
        let err = d.decide(&d.aggregate(&answers)).await.unwrap_err();
        assert!(matches!(err, PipelineError::UnparseableVerdict { .. }));
        assert_eq!(err.stage(), Stage::Decide);
    }

    #[tokio::test]
    async fn decide_falls_back_to_token_after_retry() {
        let d = detector(echo_prompt_id(), constant_lm("Probably fake, honestly."), DetectorOptions::default());
        let answers = d.interrogate(&image(), &builtin_prompt_set()).await.unwrap();
        let (v, calls) = d.decide(&d.aggregate(&answers)).await.unwrap();
        assert_eq!((v.label, v.confidence, calls), (Label::Fake, 50, 2));
    }

    #[tokio::test]
    async fn classify_counts_calls_and_scores() {
        let d = detector(echo_prompt_id(), constant_lm("VERDICT: FAKE\nCONFIDENCE: 87\nREASONING: waxy"), DetectorOptions::default());
        let record = d.classify("s1", &image(), &builtin_prompt_set()).await.unwrap();
        assert_eq!(record.fake_score, 0.87);
        assert_eq!(record.mode, DetectionMode::FullPipeline);
        assert_eq!(d.multimodal_gateway().stats().multimodal_calls, 9);
        assert_eq!(d.decision_gateway().stats().text_calls, 1);
        assert_eq!(record.summary.text.lines().filter(|l| l.starts_with("### ")).count(), 9);

        let real = detector(echo_prompt_id(), constant_lm("VERDICT: REAL\nCONFIDENCE: 87\nREASONING: fine"), DetectorOptions::default());
        assert_eq!(real.classify("s2", &image(), &builtin_prompt_set()).await.unwrap().fake_score, 0.13);
    }

    #[tokio::test]
    async fn classify_is_deterministic_modulo_timings() {
        let d = detector(MockBackend::new(), MockBackend::new(), DetectorOptions::default());
        let a = d.classify("s", &image(), &builtin_prompt_set()).await.unwrap();
        let b = d.classify("s", &image(), &builtin_prompt_set()).await.unwrap();
        assert!(a.same_outcome(&b));
    }

    #[tokio::test]
    async fn classify_error_names_stage() {
        let lm = MockBackend::new().with_responder(|_| Some(Err(GatewayError::Transport("down".into()))));
        let d = detector(echo_prompt_id(), lm, DetectorOptions::default());
        let err = d.classify("s", &image(), &builtin_prompt_set()).await.unwrap_err();
        assert_eq!(err.stage(), Stage::Decide);
        assert!(err.to_string().starts_with("decide stage"));
    }

    #[tokio::test]
    async fn yes_no_mode() {
        let calls = Arc::new(AtomicU32::new(0));
        let seen = calls.clone();
        let mm = MockBackend::new().with_responder(move |q| {
            assert_eq!(q.kind(), QueryKind::Multimodal);
            seen.fetch_add(1, Ordering::SeqCst);
            Some(Ok(match q.image().unwrap().bytes() {
                b"a" => "FAKE",
                b"b" => "This photograph is real.",
                _ => "cannot tell",
            }
            .to_string()))
        });
        let d = detector(mm, MockBackend::new(), DetectorOptions::default());
        let img = |b: &[u8]| ImagePayload::from_bytes(b.to_vec(), MediaType::Jpeg).unwrap();
        let fake = d.classify_yes_no("a", &img(b"a")).await.unwrap();
        assert_eq!((fake.verdict.label, fake.verdict.confidence, fake.mode.clone()), (Label::Fake, 50, DetectionMode::YesNo));
        assert_eq!(d.classify_yes_no("b", &img(b"b")).await.unwrap().verdict.label, Label::Real);
        let err = d.classify_yes_no("c", &img(b"c")).await.unwrap_err();
        assert!(matches!(err, PipelineError::NoVerdictToken(_)));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(d.decision_gateway().stats().text_calls, 0);
    }

    #[test]
    fn record_round_trips_through_json() {
        let mode = DetectionMode::SingleCategory(PromptCategory::EyesAndPupils);
        let json = serde_json::to_string(&mode).unwrap();
        assert_eq!(json, r#"{"single_category":"eyes_and_pupils"}"#);
        assert_eq!(serde_json::to_string(&DetectionMode::FullPipeline).unwrap(), r#""full_pipeline""#);
        assert_eq!(serde_json::from_str::<DetectionMode>(&json).unwrap(), mode);
    }
}
