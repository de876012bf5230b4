use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{
    aggregate, segment_metric_lists, AggregateReport, ClassifiedClause, PipelineError, RunRecord,
    SegmentBackends, SegmentationOutput, RECORDS_FILE,
};
use crate::alignment::AlignmentConfig;
use crate::corpus::{load_corpus_dir, Document, LoadedCorpus, NUM_LABELS};
use crate::metrics::DEFAULT_LEVEL;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluateOptions {
    pub alignment: AlignmentConfig,
    pub level: f64,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            alignment: AlignmentConfig::default(),
            level: DEFAULT_LEVEL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub records: Vec<RunRecord>,
    pub report: AggregateReport,
}

/// Reads a `records.jsonl` file. Later records for a document replace
/// earlier ones.
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut order: Vec<String> = Vec::new();
    let mut latest: HashMap<String, RunRecord> = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord =
            serde_json::from_str(&line).map_err(|e| PipelineError::BadRecord {
                path: path.to_path_buf(),
                line: n + 1,
                detail: e.to_string(),
            })?;
        if !latest.contains_key(&record.document_id) {
            order.push(record.document_id.clone());
        }
        latest.insert(record.document_id.clone(), record);
    }
    Ok(order
        .into_iter()
        .filter_map(|id| latest.remove(&id))
        .collect())
}

fn load_clean(dir: &Path) -> Result<Vec<Document>, PipelineError> {
    let LoadedCorpus {
        documents,
        failures,
    } = load_corpus_dir(dir)?;
    if !failures.is_empty() {
        return Err(PipelineError::CorpusFailures(
            failures
                .into_iter()
                .map(|(p, e)| (p, e.to_string()))
                .collect(),
        ));
    }
    Ok(documents)
}

/// A prediction file becomes a record whose segmentation is its clause
/// list; clause labels, when present, stand in for classifier output.
fn record_from_prediction(doc: &Document) -> RunRecord {
    let mut record = RunRecord::new(&doc.id);
    let clauses: Vec<String> = doc.clause_texts().map(str::to_string).collect();
    if doc.clauses.iter().any(|c| !c.labels.is_empty()) {
        record.classified_clauses = doc
            .clauses
            .iter()
            .map(|c| {
                let mut probabilities = vec![0.0; NUM_LABELS];
                for l in &c.labels {
                    probabilities[l.index()] = 1.0;
                }
                ClassifiedClause {
                    text: c.text().to_string(),
                    probabilities,
                    labels: c.labels.clone(),
                }
            })
            .collect();
    }
    if !clauses.is_empty() {
        record.segmentation = Some(SegmentationOutput {
            document_id: doc.id.clone(),
            predicted_clauses: clauses,
            raw_model_output: String::new(),
            input_tokens: 0,
            output_tokens: 0,
        });
    }
    record
}

/// Re-scores existing predictions against `references` without calling
/// the segmenter or classifier. `predictions` is a `records.jsonl` file, a
/// run directory holding one, or a directory of annotated `.txt` files.
/// Model-backed pair metrics are carried over from the records.
pub fn evaluate_offline(
    predictions: &Path,
    references: &Path,
    opts: &EvaluateOptions,
) -> Result<EvaluateOutcome, PipelineError> {
    opts.alignment
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(PipelineError::Config(format!(
            "confidence level {} outside (0, 1)",
            opts.level
        )));
    }
    let refs = load_clean(references)?;
    let records_file = if predictions.is_dir() {
        Some(predictions.join(RECORDS_FILE)).filter(|p| p.is_file())
    } else {
        Some(predictions.to_path_buf())
    };
    let prior: Vec<RunRecord> = match records_file {
        Some(path) => load_records(&path)?,
        None => load_clean(predictions)?
            .iter()
            .map(record_from_prediction)
            .collect(),
    };

    let ref_ids: BTreeSet<&str> = refs.iter().map(|d| d.id.as_str()).collect();
    let pred_ids: BTreeSet<&str> = prior.iter().map(|r| r.document_id.as_str()).collect();
    let missing: Vec<String> = ref_ids
        .difference(&pred_ids)
        .map(|s| s.to_string())
        .collect();
    let unknown: Vec<String> = pred_ids
        .difference(&ref_ids)
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(PipelineError::OrphanDocuments {
            missing_predictions: missing,
            unknown_predictions: unknown,
        });
    }

    let mut by_id: HashMap<String, RunRecord> = prior
        .into_iter()
        .map(|r| (r.document_id.clone(), r))
        .collect();
    let mut records = Vec::with_capacity(refs.len());
    for reference in &refs {
        let mut record = by_id.remove(&reference.id).expect("ids checked above");
        if record.is_complete() {
            rescore(&mut record, reference, &opts.alignment)?;
        }
        records.push(record);
    }
    let report = aggregate(&records, opts.level);
    Ok(EvaluateOutcome { records, report })
}

fn rescore(
    record: &mut RunRecord,
    reference: &Document,
    cfg: &AlignmentConfig,
) -> Result<(), PipelineError> {
    let earlier: HashMap<(usize, usize), _> = std::mem::take(&mut record.segment_pairs)
        .into_iter()
        .map(|p| ((p.ref_index, p.pred_index), p))
        .collect();
    record.score(reference, cfg, SegmentBackends::default())?;
    for pair in &mut record.segment_pairs {
        if let Some(old) = earlier.get(&(pair.ref_index, pair.pred_index)) {
            pair.factual_correctness = old.factual_correctness;
            pair.semantic_similarity = old.semantic_similarity;
            pair.errors = old.errors.clone();
        }
    }
    record.segment_level_metrics = segment_metric_lists(&record.segment_pairs);
    Ok(())
}
