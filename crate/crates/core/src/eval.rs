//! Dataset evaluation and the per-category ablation.

use std::collections::BTreeMap;
use std::io::Write;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::gateway::ImagePayload;
use crate::manifest::{Generator, Manifest, Sample};
use crate::metrics::{
    accuracy, confusion, precision_recall_f1, roc_auc, roc_curve, ConfusionCounts, RocPoint, ScoredLabel,
};
use crate::pipeline::{DetectionMode, DetectionRecord, Detector};
use crate::prompts::{select_categories, PromptCategory, PromptError, PromptSet};
use crate::Label;

pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Samples classified concurrently.
    pub parallelism: usize,
    /// Largest tolerated fraction of failed samples.
    pub failure_threshold: f64,
    pub config_fingerprint: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { parallelism: 4, failure_threshold: DEFAULT_FAILURE_THRESHOLD, config_fingerprint: String::new() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("manifest has no samples")]
    EmptyManifest,
    #[error("failure threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("ablation: {0}")]
    Prompts(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// More samples failed than the threshold allows; metrics cover the rest.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub samples: u64,
    pub confusion: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub image_sha256: String,
    pub true_label: Label,
    pub generator: Generator,
    pub pred_label: Option<Label>,
    pub fake_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_name: String,
    pub mode: DetectionMode,
    pub prompt_set_version: String,
    pub config_fingerprint: String,
    pub status: RunStatus,
    pub sample_count: usize,
    pub evaluated_count: usize,
    pub failure_count: usize,
    pub failure_threshold: f64,
    pub overall: MetricSet,
    pub per_generator: BTreeMap<String, MetricSet>,
    /// Fraction of each class labelled correctly, keyed "Real" or by generator tag.
    pub class_accuracy: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub per_sample: Vec<SampleRow>,
}

impl EvalReport {
    pub fn failed(&self) -> bool {
        self.status == RunStatus::Failed
    }

    /// JSON with stable formatting.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `sample_id,true_label,pred_label,fake_score,generator,mode`
    pub fn write_samples_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "true_label", "pred_label", "fake_score", "generator", "mode"])?;
        let mode = mode_tag(&self.mode);
        for row in &self.per_sample {
            let score = match (row.fake_score, self.mode.has_score()) {
                (Some(s), true) => s.to_string(),
                _ => String::new(),
            };
            w.write_record([
                row.sample_id.as_str(),
                row.true_label.as_str(),
                row.pred_label.map_or("", |l| l.as_str()),
                &score,
                row.generator.as_str(),
                &mode,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// ROC over the evaluated samples; absent without a score or with one class.
    pub fn roc_curve(&self) -> Option<Vec<RocPoint>> {
        if !self.mode.has_score() {
            return None;
        }
        roc_curve(&scored_rows(self.per_sample.iter())).ok()
    }
}

pub fn mode_tag(mode: &DetectionMode) -> String {
    match mode {
        DetectionMode::FullPipeline => "full".into(),
        DetectionMode::YesNo => "yes_no".into(),
        DetectionMode::SingleCategory(c) => format!("single:{}", c.slug()),
    }
}

/// `fpr,tpr,threshold`
pub fn write_roc_csv<W: Write>(points: &[RocPoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of [`evaluate`]: the report plus the full records behind it.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    /// Successful records, sorted by sample id.
    pub records: Vec<DetectionRecord>,
}

fn scored_rows<'a>(rows: impl Iterator<Item = &'a SampleRow>) -> Vec<ScoredLabel> {
    rows.filter_map(|r| r.fake_score.map(|s| ScoredLabel { fake_score: s, true_label: r.true_label })).collect()
}

fn metric_set(rows: &[&SampleRow], with_auc: bool, scope: &str, warnings: &mut Vec<String>) -> MetricSet {
    let pairs = rows.iter().filter_map(|r| r.pred_label.map(|p| (p, r.true_label)));
    let counts = confusion(pairs).unwrap_or_default();
    let prf = precision_recall_f1(&counts).ok();
    let auc = if with_auc {
        match roc_auc(&scored_rows(rows.iter().copied())) {
            Ok(a) => Some(a),
            Err(e) => {
                warnings.push(format!("{scope}: AUC omitted: {e}"));
                None
            }
        }
    } else {
        None
    };
    MetricSet {
        samples: counts.total(),
        accuracy: accuracy(&counts).ok(),
        precision: prf.and_then(|m| m.precision),
        recall: prf.and_then(|m| m.recall),
        f1: prf.map(|m| m.f1),
        auc,
        confusion: counts,
    }
}

fn class_accuracy(rows: &[SampleRow]) -> BTreeMap<String, f64> {
    let mut tally: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.pred_label.is_some()) {
        let key = match r.true_label {
            Label::Real => "Real".to_string(),
            Label::Fake => r.generator.as_str().to_string(),
        };
        let e = tally.entry(key).or_default();
        e.0 += u64::from(r.pred_label == Some(r.true_label));
        e.1 += 1;
    }
    tally.into_iter().map(|(k, (hit, n))| (k, hit as f64 / n as f64)).collect()
}

async fn classify_sample(
    detector: &Detector,
    manifest: &Manifest,
    sample: &Sample,
    prompts: &PromptSet,
    mode: &DetectionMode,
) -> Result<DetectionRecord, String> {
    let image = ImagePayload::from_path(&manifest.resolve(sample)).map_err(|e| e.to_string())?;
    if image.sha256() != sample.sha256 {
        return Err(format!("image digest {} does not match manifest", image.sha256()));
    }
    detector.classify_with_mode(&sample.id, &image, prompts, mode.clone()).await.map_err(|e| e.to_string())
}

/// Classifies every sample and reduces the records to metrics.
///
/// Failed samples are kept in `per_sample` with their error and excluded
/// from the metrics. Once the failure count guarantees a rate above the
/// threshold, no further samples are started and the report is marked
/// [`RunStatus::Failed`].
pub async fn evaluate(
    manifest: &Manifest,
    prompts: &PromptSet,
    detector: &Detector,
    mode: DetectionMode,
    options: &EvalOptions,
) -> Result<EvalRun, EvalError> {
    if manifest.samples.is_empty() {
        return Err(EvalError::EmptyManifest);
    }
    if !(0.0..=1.0).contains(&options.failure_threshold) {
        return Err(EvalError::InvalidThreshold(options.failure_threshold));
    }
    let total = manifest.samples.len();
    let max_failures = (options.failure_threshold * total as f64).floor() as usize;

    let mut results = stream::iter(manifest.samples.iter())
        .map(|sample| {
            let mode = &mode;
            async move { (sample, classify_sample(detector, manifest, sample, prompts, mode).await) }
        })
        .buffer_unordered(options.parallelism.max(1));

    let mut outcomes = Vec::with_capacity(total);
    let mut failures = 0;
    while let Some((sample, result)) = results.next().await {
        if let Err(e) = &result {
            tracing::warn!(sample = %sample.id, error = %e, "sample failed");
            failures += 1;
        }
        outcomes.push((sample, result));
        if failures > max_failures {
            break;
        }
    }
    drop(results);
    outcomes.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let status = if failures > max_failures { RunStatus::Failed } else { RunStatus::Completed };
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut records = Vec::with_capacity(outcomes.len());
    for (sample, result) in outcomes {
        let mut row = SampleRow {
            sample_id: sample.id.clone(),
            image_sha256: sample.sha256.clone(),
            true_label: sample.true_label,
            generator: sample.generator.clone(),
            pred_label: None,
            fake_score: None,
            error: None,
        };
        match result {
            Ok(record) => {
                row.pred_label = Some(record.verdict.label);
                row.fake_score = Some(record.fake_score);
                records.push(record);
            }
            Err(e) => row.error = Some(e),
        }
        rows.push(row);
    }

    let mut warnings = Vec::new();
    if status == RunStatus::Failed {
        warnings.push(format!(
            "aborted: {failures} failed samples exceed the threshold of {} of {total}",
            options.failure_threshold
        ));
    }
    let with_auc = mode.has_score();
    let all: Vec<&SampleRow> = rows.iter().collect();
    let overall = metric_set(&all, with_auc, "overall", &mut warnings);

    let mut per_generator = BTreeMap::new();
    for generator in manifest.generators() {
        let subset: Vec<&SampleRow> =
            rows.iter().filter(|r| r.true_label == Label::Real || r.generator == generator).collect();
        let tag = generator.as_str().to_string();
        let set = metric_set(&subset, with_auc, &tag, &mut warnings);
        per_generator.insert(tag, set);
    }

    let report = EvalReport {
        dataset_name: manifest.name.clone(),
        mode,
        prompt_set_version: prompts.version.clone(),
        config_fingerprint: options.config_fingerprint.clone(),
        status,
        sample_count: total,
        evaluated_count: records.len(),
        failure_count: failures,
        failure_threshold: options.failure_threshold,
        overall,
        per_generator,
        class_accuracy: class_accuracy(&rows),
        warnings,
        per_sample: rows,
    };
    Ok(EvalRun { report, records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub category: PromptCategory,
    pub accuracy: Option<f64>,
    pub failure_count: usize,
    pub status: RunStatus,
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<EvalRun>,
}

impl AblationRun {
    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| r.status == RunStatus::Failed)
    }

    /// `category,accuracy`, one row per built-in category.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["category", "accuracy"])?;
        for row in &self.rows {
            w.write_record([row.category.display_name().to_string(), row.accuracy.map_or(String::new(), |a| a.to_string())])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates each built-in category on its own, in the canonical order.
pub async fn ablation_run(
    manifest: &Manifest,
    prompts: &PromptSet,
    detector: &Detector,
    options: &EvalOptions,
) -> Result<AblationRun, EvalError> {
    let mut rows = Vec::with_capacity(PromptCategory::BUILTIN.len());
    let mut runs = Vec::with_capacity(PromptCategory::BUILTIN.len());
    for category in PromptCategory::BUILTIN {
        let single = select_categories(prompts, std::slice::from_ref(&category))?;
        let run = evaluate(manifest, &single, detector, DetectionMode::SingleCategory(category.clone()), options).await?;
        rows.push(AblationRow {
            category,
            accuracy: run.report.overall.accuracy,
            failure_count: run.report.failure_count,
            status: run.report.status,
        });
        runs.push(run);
    }
    Ok(AblationRun { rows, runs })
}
