//! Two-stage orchestration: segment each NDA with an LLM, classify the
//! predicted clauses, and score both stages against the annotations.

mod config;
mod evaluate;
mod report;
mod run;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{
    comparison_stats, filter_aligned_pairs, needleman_wunsch, AlignedPair, Alignment,
    AlignmentConfig, ComparisonStats,
};
use crate::corpus::{extract_clause_blocks, ClauseLabel, CorpusError, Document, LabelSet};
use crate::gateway::{ChatRequest, GatewayError, ModelClient};
use crate::metrics::{
    hamming_loss, macro_f1, mcc_multilabel, per_label_f1, rouge1, weighted_f1, LabelMatrix,
    MetricsError,
};
use crate::prompts::{PromptError, PromptTemplate};
use crate::semantic::{semantic_similarity, Judge, ScoreMode};
use crate::workers::parallel_map;

pub use config::{
    Backends, Clock, PipelineConfig, PromptPaths, PromptSet, Thresholds, DEFAULT_DECISION_THRESHOLD,
};
pub use evaluate::{evaluate_offline, load_records, EvaluateOptions, EvaluateOutcome};
pub use report::{
    aggregate, render_table, AggregateReport, ClassificationBlock, ComparisonTotals, FailureEntry,
    MetricRow, DOCUMENT_METRICS, SEGMENT_METRICS,
};
pub use run::{run_pipeline, write_report, RunSummary, RECORDS_FILE, REPORT_JSON, REPORT_TXT};

pub const ROUGE_RECALL: &str = "rouge_recall";
pub const ROUGE_PRECISION: &str = "rouge_precision";
pub const ROUGE_F1: &str = "rouge_f1";
pub const ALIGNMENT: &str = "alignment";
pub const FACTUAL_CORRECTNESS: &str = "factual_correctness";
pub const SEMANTIC_SIMILARITY: &str = "semantic_similarity";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{} corpus file(s) failed to parse: {}", .0.len(), summarize_failures(.0))]
    CorpusFailures(Vec<(PathBuf, String)>),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("segmentation of {document_id} produced no clauses")]
    SegmentationEmpty { document_id: String },
    #[error("classification of clause {clause_index} failed: {source}")]
    Classification {
        clause_index: usize,
        #[source]
        source: GatewayError,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("document ids do not match: {}", describe_orphans(.missing_predictions, .unknown_predictions))]
    OrphanDocuments {
        missing_predictions: Vec<String>,
        unknown_predictions: Vec<String>,
    },
    #[error("{path}: bad record on line {line}: {detail}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

fn summarize_failures(failures: &[(PathBuf, String)]) -> String {
    failures
        .iter()
        .map(|(p, e)| format!("{}: {e}", p.display()))
        .collect::<Vec<_>>()
        .join("; ")
}

fn describe_orphans(missing: &[String], unknown: &[String]) -> String {
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("no predictions for [{}]", missing.join(", ")));
    }
    if !unknown.is_empty() {
        parts.push(format!("no reference for [{}]", unknown.join(", ")));
    }
    parts.join("; ")
}

impl PipelineError {
    /// Process exit status: 1 for config and I/O problems, 2 for bad data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Io { .. }
            | PipelineError::Prompt(_)
            | PipelineError::Gateway(_)
            | PipelineError::Corpus(CorpusError::Io { .. }) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationOutput {
    pub document_id: String,
    pub predicted_clauses: Vec<String>,
    pub raw_model_output: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedClause {
    pub text: String,
    pub probabilities: Vec<f64>,
    pub labels: LabelSet,
}

/// Labels with probability at or above `threshold`; the argmax label when
/// none clears it.
pub fn labels_from_probabilities(probabilities: &[f64], threshold: f64) -> LabelSet {
    let mut labels: LabelSet = probabilities
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .filter_map(|(i, _)| ClauseLabel::from_index(i))
        .collect();
    if labels.is_empty() {
        let argmax = probabilities.iter().enumerate().fold(
            None::<(usize, f64)>,
            |best, (i, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((i, p)),
            },
        );
        if let Some(label) = argmax.and_then(|(i, _)| ClauseLabel::from_index(i)) {
            labels.insert(label);
        }
    }
    labels
}

/// Runs the segmentation prompt over `raw_text` and parses the delimited
/// clauses out of the reply.
pub fn segment_document(
    document_id: &str,
    raw_text: &str,
    template: &PromptTemplate,
    client: &ModelClient,
) -> Result<SegmentationOutput, PipelineError> {
    if raw_text.trim().is_empty() {
        return Err(PipelineError::EmptyInput("document text is empty"));
    }
    let req = ChatRequest::new(
        template.system.clone(),
        template.render(&[("document", raw_text)]),
    );
    let reply = client.chat_complete(&req)?;
    let predicted_clauses = extract_clause_blocks(&reply.content);
    if predicted_clauses.is_empty() {
        return Err(PipelineError::SegmentationEmpty {
            document_id: document_id.to_string(),
        });
    }
    Ok(SegmentationOutput {
        document_id: document_id.to_string(),
        predicted_clauses,
        raw_model_output: reply.content,
        input_tokens: reply.prompt_tokens,
        output_tokens: reply.completion_tokens,
    })
}

/// Classifies each clause, in order, fanning out up to the client's
/// concurrency cap.
pub fn classify_clauses<S: AsRef<str> + Sync>(
    clauses: &[S],
    client: &ModelClient,
    decision_threshold: f64,
) -> Result<Vec<ClassifiedClause>, PipelineError> {
    if clauses.is_empty() {
        return Err(PipelineError::EmptyInput("no clauses to classify"));
    }
    let width = client.config().max_concurrency;
    parallel_map(clauses, width, |i, text| {
        let text = text.as_ref();
        let response = client
            .classify(text)
            .map_err(|source| PipelineError::Classification {
                clause_index: i,
                source,
            })?;
        Ok(ClassifiedClause {
            text: text.to_string(),
            labels: labels_from_probabilities(&response.probabilities, decision_threshold),
            probabilities: response.probabilities,
        })
    })
    .into_iter()
    .collect()
}

/// ROUGE-1 of all predicted clauses against all reference clauses, each
/// side joined into one text.
pub fn evaluate_document_level(
    reference: &Document,
    seg: &SegmentationOutput,
) -> BTreeMap<String, f64> {
    let predicted = seg.predicted_clauses.join("\n");
    let score = rouge1(&predicted, &reference.clause_content());
    BTreeMap::from([
        (ROUGE_RECALL.to_string(), score.recall),
        (ROUGE_PRECISION.to_string(), score.precision),
        (ROUGE_F1.to_string(), score.f1),
    ])
}

/// Optional model backends for the expensive segment metrics.
#[derive(Clone, Copy, Default)]
pub struct SegmentBackends<'a> {
    pub embedder: Option<&'a ModelClient>,
    pub judge: Option<&'a Judge<'a>>,
    pub factual_mode: ScoreMode,
}

/// Metrics for one aligned pair that survived the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub ref_index: usize,
    pub pred_index: usize,
    pub alignment: f64,
    pub rouge_recall: f64,
    pub rouge_precision: f64,
    pub rouge_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factual_correctness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEvaluation {
    pub alignment: Alignment,
    pub comparison: ComparisonStats,
    pub pairs: Vec<PairEvaluation>,
}

impl SegmentEvaluation {
    pub fn metric_lists(&self) -> BTreeMap<String, Vec<f64>> {
        segment_metric_lists(&self.pairs)
    }

    pub fn filtered_pairs(&self) -> Vec<AlignedPair> {
        self.pairs
            .iter()
            .map(|p| AlignedPair {
                ref_index: p.ref_index,
                pred_index: p.pred_index,
                score: p.alignment,
            })
            .collect()
    }
}

/// One list per segment metric; model-backed lists only hold the pairs
/// for which the metric was computed.
pub fn segment_metric_lists(pairs: &[PairEvaluation]) -> BTreeMap<String, Vec<f64>> {
    let column = |f: &dyn Fn(&PairEvaluation) -> Option<f64>| -> Vec<f64> {
        pairs.iter().filter_map(f).collect()
    };
    BTreeMap::from([
        (ALIGNMENT.to_string(), column(&|p| Some(p.alignment))),
        (ROUGE_RECALL.to_string(), column(&|p| Some(p.rouge_recall))),
        (
            ROUGE_PRECISION.to_string(),
            column(&|p| Some(p.rouge_precision)),
        ),
        (ROUGE_F1.to_string(), column(&|p| Some(p.rouge_f1))),
        (
            FACTUAL_CORRECTNESS.to_string(),
            column(&|p| p.factual_correctness),
        ),
        (
            SEMANTIC_SIMILARITY.to_string(),
            column(&|p| p.semantic_similarity),
        ),
    ])
}

/// Aligns predicted clauses to reference clauses, keeps pairs scoring
/// above the filter threshold, and scores each kept pair.
pub fn evaluate_segment_level(
    reference: &Document,
    seg: &SegmentationOutput,
    cfg: &AlignmentConfig,
    backends: SegmentBackends<'_>,
) -> Result<SegmentEvaluation, PipelineError> {
    let refs: Vec<&str> = reference.clause_texts().collect();
    let preds = &seg.predicted_clauses;
    let alignment =
        needleman_wunsch(&refs, preds, cfg).map_err(|e| PipelineError::Config(e.to_string()))?;
    let kept = filter_aligned_pairs(&alignment, cfg.filter_threshold);
    let comparison = comparison_stats(&alignment, kept.len());

    let width = [backends.embedder, backends.judge.map(Judge::client)]
        .into_iter()
        .flatten()
        .map(|c| c.config().max_concurrency)
        .max()
        .unwrap_or(1);
    let pairs = parallel_map(&kept, width, |_, pair| {
        let r = refs[pair.ref_index];
        let p = preds[pair.pred_index].as_str();
        let rouge = rouge1(p, r);
        let mut eval = PairEvaluation {
            ref_index: pair.ref_index,
            pred_index: pair.pred_index,
            alignment: pair.score,
            rouge_recall: rouge.recall,
            rouge_precision: rouge.precision,
            rouge_f1: rouge.f1,
            factual_correctness: None,
            semantic_similarity: None,
            errors: Vec::new(),
        };
        if let Some(judge) = backends.judge {
            match judge.factual_correctness(p, r) {
                Ok(result) => eval.factual_correctness = Some(result.score(backends.factual_mode)),
                Err(e) => eval.errors.push(format!("{FACTUAL_CORRECTNESS}: {e}")),
            }
        }
        if let Some(embedder) = backends.embedder {
            match semantic_similarity(p, r, embedder) {
                Ok(s) => eval.semantic_similarity = Some(s),
                Err(e) => eval.errors.push(format!("{SEMANTIC_SIMILARITY}: {e}")),
            }
        }
        eval
    });
    Ok(SegmentEvaluation {
        alignment,
        comparison,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub hamming_loss: f64,
    pub mcc: f64,
}

pub fn evaluate_classification(
    y_true: &LabelMatrix,
    y_pred: &LabelMatrix,
) -> Result<ClassificationMetrics, PipelineError> {
    let per_label = per_label_f1(y_true, y_pred)?;
    Ok(ClassificationMetrics {
        macro_f1: macro_f1(&per_label),
        weighted_f1: weighted_f1(&per_label)?,
        hamming_loss: hamming_loss(y_true, y_pred)?,
        mcc: mcc_multilabel(y_true, y_pred)?,
    })
}

/// Reference labels next to the labels predicted for the aligned clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPair {
    pub ref_index: usize,
    pub pred_index: usize,
    pub reference: LabelSet,
    pub predicted: LabelSet,
}

/// Label pairs over the kept alignment pairs. Unannotated reference
/// clauses carry no ground truth and are skipped.
pub fn label_pairs(
    reference: &Document,
    kept: &[AlignedPair],
    classified: &[ClassifiedClause],
) -> Vec<LabelPair> {
    kept.iter()
        .filter_map(|pair| {
            let truth = &reference.clauses.get(pair.ref_index)?.labels;
            let predicted = &classified.get(pair.pred_index)?.labels;
            (!truth.is_empty()).then(|| LabelPair {
                ref_index: pair.ref_index,
                pred_index: pair.pred_index,
                reference: truth.clone(),
                predicted: predicted.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendMetadata {
    pub segmenter: String,
    pub classifier: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<String>,
}

/// Persisted result for one document; one JSON line in `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub document_id: String,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backends: Option<BackendMetadata>,
    #[serde(default)]
    pub started_at_ms: u64,
    #[serde(default)]
    pub finished_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationOutput>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classified_clauses: Vec<ClassifiedClause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Alignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonStats>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub document_level_metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segment_pairs: Vec<PairEvaluation>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub segment_level_metrics: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_pairs: Vec<LabelPair>,
}

impl RunRecord {
    pub fn new(document_id: impl Into<String>) -> Self {
        RunRecord {
            document_id: document_id.into(),
            status: RecordStatus::Complete,
            error: None,
            warnings: Vec::new(),
            prompt_hash: String::new(),
            backends: None,
            started_at_ms: 0,
            finished_at_ms: 0,
            segmentation: None,
            classified_clauses: Vec::new(),
            alignment: None,
            comparison: None,
            document_level_metrics: BTreeMap::new(),
            segment_pairs: Vec::new(),
            segment_level_metrics: BTreeMap::new(),
            label_pairs: Vec::new(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == RecordStatus::Complete
    }

    pub fn fail(&mut self, error: impl std::fmt::Display) {
        self.status = RecordStatus::Failed;
        self.error = Some(error.to_string());
    }

    /// Fills every evaluation field from stage outputs. An empty
    /// segmentation yields zero document metrics and no pairs.
    pub fn score(
        &mut self,
        reference: &Document,
        cfg: &AlignmentConfig,
        backends: SegmentBackends<'_>,
    ) -> Result<(), PipelineError> {
        let empty;
        let seg = match &self.segmentation {
            Some(seg) => seg,
            None => {
                empty = SegmentationOutput {
                    document_id: self.document_id.clone(),
                    predicted_clauses: Vec::new(),
                    raw_model_output: String::new(),
                    input_tokens: 0,
                    output_tokens: 0,
                };
                &empty
            }
        };
        self.document_level_metrics = evaluate_document_level(reference, seg);
        let segment = evaluate_segment_level(reference, seg, cfg, backends)?;
        self.label_pairs = label_pairs(
            reference,
            &segment.filtered_pairs(),
            &self.classified_clauses,
        );
        self.segment_level_metrics = segment.metric_lists();
        self.segment_pairs = segment.pairs;
        self.alignment = Some(segment.alignment);
        self.comparison = Some(segment.comparison);
        Ok(())
    }
}
