//! Positive-class scoring, cross-run statistics and comparison reports.

mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, LabeledDataset};
use crate::ensemble::PredictionSet;
use crate::float::Float;

pub use report::{
    comparison_report, published_references, render_confusion, ComparisonReport, ConfusionFormat, ReportEntry,
    ReportRow, RowSource,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("predictions from `{source_id}` do not align with the gold split: {reason}")]
    MisalignedPredictions { source_id: String, reason: String },
    #[error("gold split `{0}` carries no labels")]
    UnlabeledGold(String),
}

/// 2x2 counts with label 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn new(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    /// Count over aligned (predicted, gold) pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (pred, gold) in pairs {
            match (pred, gold) {
                (Label::Positive, Label::Positive) => cm.tp += 1,
                (Label::Positive, Label::Negative) => cm.fp += 1,
                (Label::Negative, Label::Positive) => cm.fn_ += 1,
                (Label::Negative, Label::Negative) => cm.tn += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn gold_positive(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn gold_negative(&self) -> usize {
        self.fp + self.tn
    }
}

/// Positive-class precision, recall and F1.
///
/// `degenerate` is set when any of the three had a zero denominator; the
/// affected values are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics<F> {
    pub f1: F,
    pub precision: F,
    pub recall: F,
    pub support_positive: usize,
    pub degenerate: bool,
}

fn ratio<F: Float>(num: usize, den: usize) -> Option<F> {
    (den != 0).then(|| F::from_count(num) / F::from_count(den))
}

pub fn precision_recall_f1<F: Float>(cm: &ConfusionMatrix) -> ClassificationMetrics<F> {
    let precision = ratio::<F>(cm.tp, cm.tp + cm.fp);
    let recall = ratio::<F>(cm.tp, cm.tp + cm.fn_);
    let f1 = ratio::<F>(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_);
    ClassificationMetrics {
        degenerate: precision.is_none() || recall.is_none() || f1.is_none(),
        f1: f1.unwrap_or_else(F::zero),
        precision: precision.unwrap_or_else(F::zero),
        recall: recall.unwrap_or_else(F::zero),
        support_positive: cm.gold_positive(),
    }
}

/// Confusion matrix of a prediction set against a labeled split. Ids must
/// match the split's ids position by position.
pub fn confusion_matrix(pred: &PredictionSet, gold: &LabeledDataset) -> Result<ConfusionMatrix, MetricsError> {
    let gold_labels = gold
        .labels()
        .ok_or_else(|| MetricsError::UnlabeledGold(gold.split_name().to_string()))?;
    check_alignment(pred, gold)?;
    Ok(ConfusionMatrix::from_pairs(
        pred.labels.iter().copied().zip(gold_labels),
    ))
}

pub(crate) fn check_alignment(pred: &PredictionSet, gold: &LabeledDataset) -> Result<(), MetricsError> {
    let misaligned = |reason: String| MetricsError::MisalignedPredictions {
        source_id: pred.source_id.clone(),
        reason,
    };
    if pred.example_ids.len() != gold.len() {
        return Err(misaligned(format!(
            "{} predictions for {} gold examples",
            pred.example_ids.len(),
            gold.len()
        )));
    }
    if let Some((i, (p, g))) = pred
        .example_ids
        .iter()
        .zip(gold.ids())
        .enumerate()
        .find(|(_, (p, g))| p.as_str() != *g)
    {
        return Err(misaligned(format!(
            "position {i}: prediction id `{p}` vs gold id `{g}`"
        )));
    }
    Ok(())
}

/// Per-run scores with their mean and sample (n-1) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatistics<F> {
    pub per_run_f1: Vec<F>,
    pub mean: F,
    /// Absent for fewer than two runs.
    pub sd: Option<F>,
}

pub fn run_statistics<F: Float>(f1s: &[F]) -> RunStatistics<F> {
    let n = f1s.len();
    let mean = if n == 0 {
        F::zero()
    } else {
        f1s.iter().copied().sum::<F>() / F::from_count(n)
    };
    // Welford update; the tests recompute with a plain two-pass formula.
    let sd = (n >= 2).then(|| {
        let (mut m, mut m2) = (F::zero(), F::zero());
        for (k, &x) in f1s.iter().enumerate() {
            let delta = x - m;
            m = m + delta / F::from_count(k + 1);
            m2 = m2 + delta * (x - m);
        }
        (m2 / F::from_count(n - 1)).sqrt()
    });
    RunStatistics {
        per_run_f1: f1s.to_vec(),
        mean,
        sd,
    }
}
