use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{confusion_matrix, precision_recall_f1, ConfusionMatrix, MetricsError};
use crate::corpus::LabeledDataset;
use crate::ensemble::PredictionSet;

const REFERENCE_SCORES: &str = include_str!("../../data/reference_scores.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowSource {
    Computed,
    Published,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub source: RowSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

impl ReportRow {
    pub fn published(name: impl Into<String>, f1: f64, precision: f64, recall: f64) -> Self {
        ReportRow {
            name: name.into(),
            f1,
            precision,
            recall,
            source: RowSource::Published,
            confusion: None,
        }
    }
}

pub enum ReportEntry<'a> {
    Computed {
        name: String,
        predictions: &'a PredictionSet,
        gold: &'a LabeledDataset,
    },
    Published(ReportRow),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference_rows: Vec<ReportRow>,
}

/// One row per entry, in entry order. Scores keep full precision; only the
/// renderers round.
pub fn comparison_report(entries: Vec<ReportEntry<'_>>) -> Result<ComparisonReport, MetricsError> {
    let mut report = ComparisonReport::default();
    for entry in entries {
        match entry {
            ReportEntry::Computed {
                name,
                predictions,
                gold,
            } => {
                let cm = confusion_matrix(predictions, gold)?;
                let m = precision_recall_f1::<f64>(&cm);
                report.rows.push(ReportRow {
                    name,
                    f1: m.f1,
                    precision: m.precision,
                    recall: m.recall,
                    source: RowSource::Computed,
                    confusion: Some(cm),
                });
            }
            ReportEntry::Published(row) => report.rows.push(row),
        }
    }
    Ok(report)
}

#[derive(Deserialize)]
struct ReferenceFile {
    rows: Vec<PublishedScore>,
}

#[derive(Deserialize)]
struct PublishedScore {
    name: String,
    f1: f64,
    precision: f64,
    recall: f64,
}

/// Published shared-task test scores (benchmark classifier, mean and median
/// over all submissions), shipped with the crate.
pub fn published_references() -> Vec<ReportRow> {
    let file: ReferenceFile = serde_json::from_str(REFERENCE_SCORES).expect("bundled reference scores parse");
    file.rows
        .into_iter()
        .map(|r| ReportRow::published(r.name, r.f1, r.precision, r.recall))
        .collect()
}

impl ComparisonReport {
    pub fn with_references(mut self, refs: Vec<ReportRow>) -> Self {
        self.reference_rows = refs;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.reference_rows.is_empty()
    }

    /// Markdown table, scores to six decimals. Reference rows come first.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| System | F1-score | Precision | Recall |\n|---|---|---|---|\n");
        for row in self.reference_rows.iter().chain(&self.rows) {
            let _ = writeln!(
                out,
                "| {} | {:.6} | {:.6} | {:.6} |",
                row.name, row.f1, row.precision, row.recall
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfusionFormat {
    Text,
    Csv,
}

impl std::str::FromStr for ConfusionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ConfusionFormat::Text),
            "csv" => Ok(ConfusionFormat::Csv),
            other => Err(format!("unknown confusion format `{other}` (expected text or csv)")),
        }
    }
}

/// Gold labels as rows, predicted labels as columns, class 0 first.
pub fn render_confusion(cm: &ConfusionMatrix, format: ConfusionFormat) -> String {
    match format {
        ConfusionFormat::Csv => format!("gold\\predicted,0,1\n0,{},{}\n1,{},{}\n", cm.tn, cm.fp, cm.fn_, cm.tp),
        ConfusionFormat::Text => {
            let cells = [
                ["".to_string(), "pred 0".into(), "pred 1".into(), "total".into()],
                [
                    "gold 0".into(),
                    cm.tn.to_string(),
                    cm.fp.to_string(),
                    cm.gold_negative().to_string(),
                ],
                [
                    "gold 1".into(),
                    cm.fn_.to_string(),
                    cm.tp.to_string(),
                    cm.gold_positive().to_string(),
                ],
                [
                    "total".into(),
                    (cm.tn + cm.fn_).to_string(),
                    (cm.fp + cm.tp).to_string(),
                    cm.total().to_string(),
                ],
            ];
            let width = cells.iter().flatten().map(String::len).max().unwrap_or(0);
            let mut out = String::new();
            for row in &cells {
                let _ = write!(out, "{:<w$}", row[0], w = width);
                for cell in &row[1..] {
                    let _ = write!(out, "  {:>w$}", cell, w = width);
                }
                out.push('\n');
            }
            out
        }
    }
}
