use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    evaluate_classification, ClassificationMetrics, RunRecord, ALIGNMENT, FACTUAL_CORRECTNESS,
    ROUGE_F1, ROUGE_PRECISION, ROUGE_RECALL, SEMANTIC_SIMILARITY,
};
use crate::alignment::reduction_pct;
use crate::metrics::{summarize, LabelMatrix, MetricSummary};

/// Document-level rows: (record key, display name).
pub const DOCUMENT_METRICS: [(&str, &str); 3] = [
    (ROUGE_RECALL, "ROUGE-Recall"),
    (ROUGE_PRECISION, "ROUGE-Precision"),
    (ROUGE_F1, "ROUGE-F1-Score"),
];

/// Segment-level rows, pooled over aligned pairs of all documents.
pub const SEGMENT_METRICS: [(&str, &str); 6] = [
    (ALIGNMENT, "Alignment"),
    (ROUGE_RECALL, "ROUGE-Recall"),
    (ROUGE_PRECISION, "ROUGE-Precision"),
    (ROUGE_F1, "ROUGE-F1-Score"),
    (FACTUAL_CORRECTNESS, "Factual Correctness"),
    (SEMANTIC_SIMILARITY, "Semantic Similarity"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub name: String,
    /// `None` when no document or pair contributed a value.
    pub summary: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationBlock {
    /// Aligned clause pairs with annotated reference labels.
    pub clauses: usize,
    pub metrics: ClassificationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTotals {
    pub naive_pairs: usize,
    pub evaluated_pairs: usize,
    pub reduction_pct: f64,
    pub per_document_reduction: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub document_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub level: f64,
    pub documents: usize,
    pub completed: usize,
    pub failed: usize,
    pub document_level: Vec<MetricRow>,
    pub segment_level: Vec<MetricRow>,
    pub classification: Option<ClassificationBlock>,
    pub comparison: ComparisonTotals,
    pub incomplete_pairs: usize,
    pub failures: Vec<FailureEntry>,
}

impl AggregateReport {
    pub fn row(&self, metric: &str, segment: bool) -> Option<&MetricRow> {
        let rows = if segment {
            &self.segment_level
        } else {
            &self.document_level
        };
        rows.iter().find(|r| r.metric == metric)
    }
}

/// Summaries over complete records: one sample per document for the
/// document level, one per kept pair for the segment level.
pub fn aggregate(records: &[RunRecord], level: f64) -> AggregateReport {
    let complete: Vec<&RunRecord> = records.iter().filter(|r| r.is_complete()).collect();

    let document_level = DOCUMENT_METRICS
        .iter()
        .map(|&(key, name)| {
            let samples: Vec<f64> = complete
                .iter()
                .filter_map(|r| r.document_level_metrics.get(key).copied())
                .collect();
            row(key, name, &samples, level)
        })
        .collect();
    let segment_level = SEGMENT_METRICS
        .iter()
        .map(|&(key, name)| {
            let samples: Vec<f64> = complete
                .iter()
                .flat_map(|r| {
                    r.segment_level_metrics
                        .get(key)
                        .into_iter()
                        .flatten()
                        .copied()
                })
                .collect();
            row(key, name, &samples, level)
        })
        .collect();

    let label_pairs: Vec<_> = complete.iter().flat_map(|r| &r.label_pairs).collect();
    let classification = (!label_pairs.is_empty())
        .then(|| {
            let truth = LabelMatrix::from_label_sets(label_pairs.iter().map(|p| &p.reference));
            let pred = LabelMatrix::from_label_sets(label_pairs.iter().map(|p| &p.predicted));
            evaluate_classification(&truth, &pred).ok()
        })
        .flatten()
        .map(|metrics| ClassificationBlock {
            clauses: label_pairs.len(),
            metrics,
        });

    let stats: Vec<_> = complete.iter().filter_map(|r| r.comparison).collect();
    let naive_pairs = stats.iter().map(|s| s.naive_pairs).sum();
    let evaluated_pairs = stats.iter().map(|s| s.evaluated_pairs).sum();
    let reductions: Vec<f64> = stats.iter().map(|s| s.reduction_pct).collect();
    let comparison = ComparisonTotals {
        naive_pairs,
        evaluated_pairs,
        reduction_pct: reduction_pct(naive_pairs, evaluated_pairs),
        per_document_reduction: summarize(&reductions, level),
    };

    let failures: Vec<FailureEntry> = records
        .iter()
        .filter(|r| !r.is_complete())
        .map(|r| FailureEntry {
            document_id: r.document_id.clone(),
            error: r.error.clone().unwrap_or_default(),
        })
        .collect();

    AggregateReport {
        level,
        documents: records.len(),
        completed: complete.len(),
        failed: failures.len(),
        document_level,
        segment_level,
        classification,
        comparison,
        incomplete_pairs: complete
            .iter()
            .flat_map(|r| &r.segment_pairs)
            .filter(|p| !p.errors.is_empty())
            .count(),
        failures,
    }
}

fn row(key: &str, name: &str, samples: &[f64], level: f64) -> MetricRow {
    MetricRow {
        metric: key.to_string(),
        name: name.to_string(),
        summary: summarize(samples, level),
    }
}

fn write_rows(out: &mut String, rows: &[MetricRow]) {
    let _ = writeln!(
        out,
        "{:<22} {:>8} {:>12} {:>7}",
        "Metric", "Mean", "± CI", "n"
    );
    for r in rows {
        match &r.summary {
            Some(s) => {
                let flag = if s.point_estimate_only {
                    " (point estimate)"
                } else {
                    ""
                };
                let _ = writeln!(
                    out,
                    "{:<22} {:>8.4} {:>12.4} {:>7}{flag}",
                    r.name, s.mean, s.half_width, s.n
                );
            }
            None => {
                let _ = writeln!(out, "{:<22} {:>8} {:>12} {:>7}", r.name, "n/a", "n/a", 0);
            }
        }
    }
}

/// Plain-text rendering with one table per evaluation level.
pub fn render_table(report: &AggregateReport) -> String {
    let mut out = String::new();
    let pct = report.level * 100.0;
    let _ = writeln!(
        out,
        "Documents: {} total, {} completed, {} failed",
        report.documents, report.completed, report.failed
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Document level: reference vs generated document ({pct}% CI)"
    );
    write_rows(&mut out, &report.document_level);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Segment level: reference vs generated segment, pooled over aligned pairs ({pct}% CI)"
    );
    write_rows(&mut out, &report.segment_level);
    if report.incomplete_pairs > 0 {
        let _ = writeln!(
            out,
            "Pairs missing model-backed metrics: {}",
            report.incomplete_pairs
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Classification");
    match &report.classification {
        Some(block) => {
            let m = &block.metrics;
            let _ = writeln!(out, "{:<22} {:>8.4}", "Macro F1", m.macro_f1);
            let _ = writeln!(out, "{:<22} {:>8.4}", "Weighted F1", m.weighted_f1);
            let _ = writeln!(out, "{:<22} {:>8.4}", "Hamming Loss", m.hamming_loss);
            let _ = writeln!(out, "{:<22} {:>8.4}", "MCC", m.mcc);
            let _ = writeln!(out, "{:<22} {:>8}", "Clauses", block.clauses);
        }
        None => {
            let _ = writeln!(out, "no labelled aligned clauses");
        }
    }
    let _ = writeln!(out);
    let c = &report.comparison;
    let _ = writeln!(out, "Comparisons");
    let _ = writeln!(out, "{:<22} {:>8}", "Naive pairs", c.naive_pairs);
    let _ = writeln!(out, "{:<22} {:>8}", "Evaluated pairs", c.evaluated_pairs);
    let _ = writeln!(out, "{:<22} {:>7.2}%", "Reduction", c.reduction_pct);
    if !report.failures.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Failures ({})", report.failures.len());
        for f in &report.failures {
            let _ = writeln!(out, "  {}: {}", f.document_id, f.error);
        }
    }
    out
}
