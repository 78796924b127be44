//! Binary classification metrics with `Fake` as the positive class.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::Label;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("only {0} samples present; need both classes")]
    SingleClass(Label),
    #[error("fake_score {0} outside [0, 1]")]
    InvalidScore(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, truth: Label) {
        match (predicted, truth) {
            (Label::Fake, Label::Fake) => self.tp += 1,
            (Label::Fake, Label::Real) => self.fp += 1,
            (Label::Real, Label::Real) => self.tn += 1,
            (Label::Real, Label::Fake) => self.fn_ += 1,
        }
    }
}

/// Counts `(predicted, truth)` pairs.
pub fn confusion<I>(pairs: I) -> Result<ConfusionCounts, MetricsError>
where
    I: IntoIterator<Item = (Label, Label)>,
{
    let mut counts = ConfusionCounts::default();
    for (predicted, truth) in pairs {
        counts.record(predicted, truth);
    }
    if counts.total() == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(counts)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    match c.total() {
        0 => Err(MetricsError::EmptyInput),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF1 {
    /// Absent when nothing was predicted Fake.
    pub precision: Option<f64>,
    /// Absent when no sample is truly Fake.
    pub recall: Option<f64>,
    pub f1: f64,
}

/// Harmonic mean of precision and recall; 0 when either is absent or both are 0.
pub fn f1_score(precision: Option<f64>, recall: Option<f64>) -> f64 {
    match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
        _ => 0.0,
    }
}

pub fn precision_recall_f1(c: &ConfusionCounts) -> Result<PrecisionRecallF1, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Ok(PrecisionRecallF1 { precision, recall, f1: f1_score(precision, recall) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub fake_score: f64,
    pub true_label: Label,
}

impl ScoredLabel {
    pub fn new(fake_score: f64, true_label: Label) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&fake_score) {
            return Err(MetricsError::InvalidScore(fake_score));
        }
        Ok(ScoredLabel { fake_score, true_label })
    }
}

fn validate(scored: &[ScoredLabel]) -> Result<(u64, u64), MetricsError> {
    if scored.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(bad) = scored.iter().find(|s| !(0.0..=1.0).contains(&s.fake_score)) {
        return Err(MetricsError::InvalidScore(bad.fake_score));
    }
    let fakes = scored.iter().filter(|s| s.true_label == Label::Fake).count() as u64;
    let reals = scored.len() as u64 - fakes;
    match (fakes, reals) {
        (0, _) => Err(MetricsError::SingleClass(Label::Real)),
        (_, 0) => Err(MetricsError::SingleClass(Label::Fake)),
        _ => Ok((fakes, reals)),
    }
}

/// Groups of equal score as `(score, fakes, reals)`, sorted by score.
fn score_groups(scored: &[ScoredLabel], order: Ordering) -> Vec<(f64, u64, u64)> {
    let mut sorted: Vec<_> = scored.to_vec();
    sorted.sort_by(|a, b| {
        let o = a.fake_score.total_cmp(&b.fake_score);
        if order == Ordering::Less { o } else { o.reverse() }
    });
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for s in sorted {
        let (f, r) = match s.true_label {
            Label::Fake => (1, 0),
            Label::Real => (0, 1),
        };
        match groups.last_mut() {
            Some(g) if g.0 == s.fake_score => {
                g.1 += f;
                g.2 += r;
            }
            _ => groups.push((s.fake_score, f, r)),
        }
    }
    groups
}

/// Area under the ROC curve as the normalised Mann-Whitney U statistic:
/// the fraction of (fake, real) pairs where the fake scores higher, with
/// ties counted as half.
pub fn roc_auc(scored: &[ScoredLabel]) -> Result<f64, MetricsError> {
    let (fakes, reals) = validate(scored)?;
    // twice the U statistic, kept integral
    let mut doubled_u: u64 = 0;
    let mut reals_below: u64 = 0;
    for (_, f, r) in score_groups(scored, Ordering::Less) {
        doubled_u += 2 * f * reals_below + f * r;
        reals_below += r;
    }
    Ok(doubled_u as f64 / (2 * fakes * reals) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples scoring at or above this are called Fake. The first point uses +inf.
    pub threshold: f64,
}

/// ROC points from (0,0) to (1,1), one per distinct score.
pub fn roc_curve(scored: &[ScoredLabel]) -> Result<Vec<RocPoint>, MetricsError> {
    let (fakes, reals) = validate(scored)?;
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (score, f, r) in score_groups(scored, Ordering::Greater) {
        tp += f;
        fp += r;
        points.push(RocPoint { fpr: fp as f64 / reals as f64, tpr: tp as f64 / fakes as f64, threshold: score });
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0).sum()
}
