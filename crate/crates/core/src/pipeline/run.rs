use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use super::{
    aggregate, classify_clauses, render_table, segment_document, AggregateReport, BackendMetadata,
    PipelineConfig, PipelineError, PromptSet, RunRecord, SegmentBackends,
};
use crate::alignment::AlignmentConfig;
use crate::corpus::{load_corpus_dir, Document};
use crate::gateway::ModelClient;
use crate::semantic::{Judge, ScoreMode};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub report: AggregateReport,
    /// Documents processed in this invocation.
    pub processed: usize,
    /// Documents whose earlier complete record was reused.
    pub skipped: usize,
}

impl RunSummary {
    pub fn has_failures(&self) -> bool {
        self.report.failed > 0
    }
}

struct Stages<'a> {
    segmenter: &'a ModelClient,
    classifier: &'a ModelClient,
    embedder: Option<&'a ModelClient>,
    judge: Option<&'a Judge<'a>>,
    prompts: &'a PromptSet,
    prompt_hash: &'a str,
    metadata: &'a BackendMetadata,
    alignment: AlignmentConfig,
    decision_threshold: f64,
    factual_mode: ScoreMode,
    clock: super::Clock,
}

impl Stages<'_> {
    fn process(&self, doc: &Document) -> RunRecord {
        let mut record = RunRecord::new(&doc.id);
        record.prompt_hash = self.prompt_hash.to_string();
        record.backends = Some(self.metadata.clone());
        record.started_at_ms = self.clock.now_ms();
        if let Err(e) = self.run_stages(doc, &mut record) {
            record.fail(e);
        }
        record.finished_at_ms = self.clock.now_ms();
        record
    }

    fn run_stages(&self, doc: &Document, record: &mut RunRecord) -> Result<(), PipelineError> {
        match segment_document(
            &doc.id,
            &doc.source_text(),
            &self.prompts.segmentation,
            self.segmenter,
        ) {
            Ok(seg) => {
                record.classified_clauses = classify_clauses(
                    &seg.predicted_clauses,
                    self.classifier,
                    self.decision_threshold,
                )?;
                record.segmentation = Some(seg);
            }
            Err(e @ PipelineError::SegmentationEmpty { .. }) => record.warnings.push(e.to_string()),
            Err(e) => return Err(e),
        }
        record.score(
            doc,
            &self.alignment,
            SegmentBackends {
                embedder: self.embedder,
                judge: self.judge,
                factual_mode: self.factual_mode,
            },
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads every parseable record; a torn trailing line from an interrupted
/// run is ignored.
fn read_existing(path: &Path) -> Result<Vec<RunRecord>, PipelineError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if let Ok(record) = serde_json::from_str::<RunRecord>(&line) {
            records.push(record);
        }
    }
    Ok(records)
}

fn open_for_append(path: &Path) -> Result<File, PipelineError> {
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let len = file.metadata().map_err(io_err(path))?.len();
    if len > 0 {
        let mut last = [0u8; 1];
        file.seek(SeekFrom::Start(len - 1)).map_err(io_err(path))?;
        file.read_exact(&mut last).map_err(io_err(path))?;
        if last[0] != b'\n' {
            file.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    Ok(file)
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn write_report(dir: &Path, report: &AggregateReport) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json_path = dir.join(REPORT_JSON);
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    std::fs::write(&json_path, json).map_err(io_err(&json_path))?;
    let txt_path = dir.join(REPORT_TXT);
    std::fs::write(&txt_path, render_table(report)).map_err(io_err(&txt_path))
}

/// Runs segmentation, classification and evaluation over the corpus,
/// appending one record per document to `records.jsonl` and writing the
/// aggregate report. Documents with a complete record under the same
/// prompt hash are not reprocessed.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let prompts = cfg.prompt_set()?;
    let prompt_hash = prompts.hash();

    let corpus = load_corpus_dir(&cfg.corpus_dir)?;
    if !corpus.failures.is_empty() {
        return Err(PipelineError::CorpusFailures(
            corpus
                .failures
                .into_iter()
                .map(|(p, e)| (p, e.to_string()))
                .collect(),
        ));
    }
    let docs = corpus.documents;

    let b = &cfg.backends;
    let segmenter = ModelClient::from_config(b.segmenter.clone())?;
    let classifier = ModelClient::from_config_with_references(b.classifier.clone(), &docs)?;
    let embedder = b
        .embedder
        .clone()
        .map(ModelClient::from_config)
        .transpose()?;
    let judge_client = b.judge.clone().map(ModelClient::from_config).transpose()?;
    let judge = judge_client
        .as_ref()
        .map(|c| Judge::with_templates(c, prompts.decompose.clone(), prompts.verify.clone()));
    let metadata = BackendMetadata {
        segmenter: b.segmenter.model_name.clone(),
        classifier: b.classifier.model_name.clone(),
        embedder: b.embedder.as_ref().map(|c| c.model_name.clone()),
        judge: b.judge.as_ref().map(|c| c.model_name.clone()),
    };

    let run_id = cfg.effective_run_id();
    let run_dir = cfg.out_dir.join(&run_id);
    std::fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    let records_path = run_dir.join(RECORDS_FILE);

    let mut latest: HashMap<String, RunRecord> = HashMap::new();
    for record in read_existing(&records_path)? {
        latest.insert(record.document_id.clone(), record);
    }
    let pending: Vec<&Document> = docs
        .iter()
        .filter(|d| {
            !latest
                .get(&d.id)
                .is_some_and(|r| r.is_complete() && r.prompt_hash == prompt_hash)
        })
        .collect();
    let skipped = docs.len() - pending.len();

    let stages = Stages {
        segmenter: &segmenter,
        classifier: &classifier,
        embedder: embedder.as_ref(),
        judge: judge.as_ref(),
        prompts: &prompts,
        prompt_hash: &prompt_hash,
        metadata: &metadata,
        alignment: cfg.alignment(),
        decision_threshold: cfg.thresholds.decision,
        factual_mode: cfg.factual_mode,
        clock: cfg.clock,
    };

    let mut out = open_for_append(&records_path)?;
    let fresh = process_in_order(&pending, cfg.workers, &stages, |record| {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        out.write_all(line.as_bytes())
            .and_then(|_| out.flush())
            .map_err(io_err(&records_path))
    })?;
    for record in fresh {
        latest.insert(record.document_id.clone(), record);
    }

    let ordered: Vec<RunRecord> = docs.iter().filter_map(|d| latest.remove(&d.id)).collect();
    let report = aggregate(&ordered, cfg.confidence_level);
    write_report(&run_dir, &report)?;
    Ok(RunSummary {
        run_id,
        run_dir,
        report,
        processed: pending.len(),
        skipped,
    })
}

/// Processes documents on `width` workers and hands each record to `sink`
/// on the calling thread, in document order.
fn process_in_order(
    docs: &[&Document],
    width: usize,
    stages: &Stages<'_>,
    mut sink: impl FnMut(&RunRecord) -> Result<(), PipelineError>,
) -> Result<Vec<RunRecord>, PipelineError> {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
    let mut written = Vec::with_capacity(docs.len());
    std::thread::scope(|scope| {
        for _ in 0..width.clamp(1, docs.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(doc) = docs.get(i) else { break };
                if tx.send((i, stages.process(doc))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut buffered = BTreeMap::new();
        for (i, record) in rx {
            buffered.insert(i, record);
            while let Some(record) = buffered.remove(&written.len()) {
                if let Err(e) = sink(&record) {
                    // stop handing out work; in-flight documents finish
                    next.store(docs.len(), Ordering::Relaxed);
                    return Err(e);
                }
                written.push(record);
            }
        }
        Ok(())
    })?;
    Ok(written)
}
