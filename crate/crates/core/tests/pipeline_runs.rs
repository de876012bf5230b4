use std::path::{Path, PathBuf};

use clausepipe_core::corpus::{load_corpus_dir, serialize_document, Document};
use clausepipe_core::gateway::BackendConfig;
use clausepipe_core::pipeline::{
    evaluate_offline, load_records, run_pipeline, Backends, Clock, EvaluateOptions, PipelineConfig,
    PipelineError, RecordStatus, RECORDS_FILE, REPORT_JSON, REPORT_TXT,
};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/nda")
}

fn identity_config(corpus: &Path, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(
        corpus,
        Backends {
            segmenter: BackendConfig::mock("echo-segment"),
            classifier: BackendConfig::mock("oracle"),
            embedder: Some(BackendConfig::mock("hash-embed")),
            judge: Some(BackendConfig::mock("verbatim-judge")),
        },
    );
    cfg.run_id = Some("identity".into());
    cfg.out_dir = out.to_path_buf();
    cfg.clock = Clock::Fixed;
    cfg
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn identity_run_is_perfect() {
    let out = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&identity_config(&fixtures(), out.path())).unwrap();
    let report = &summary.report;
    assert_eq!(
        (report.documents, report.completed, report.failed),
        (5, 5, 0)
    );
    for row in report.document_level.iter().chain(&report.segment_level) {
        let s = row
            .summary
            .unwrap_or_else(|| panic!("{} missing", row.metric));
        assert!((s.mean - 1.0).abs() < 1e-12, "{} = {}", row.metric, s.mean);
        assert_eq!(s.half_width, 0.0, "{}", row.metric);
    }
    let c = report.classification.as_ref().unwrap().metrics;
    assert_eq!((c.hamming_loss, c.mcc, c.macro_f1 > 0.99), (0.0, 1.0, true));
    assert!(summary.run_dir.join(REPORT_TXT).is_file());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_pipeline(&identity_config(&fixtures(), a.path())).unwrap();
    let rb = run_pipeline(&identity_config(&fixtures(), b.path())).unwrap();
    for file in [RECORDS_FILE, REPORT_JSON, REPORT_TXT] {
        assert_eq!(
            read(&ra.run_dir.join(file)),
            read(&rb.run_dir.join(file)),
            "{file}"
        );
    }
}

#[test]
fn resume_skips_completed_documents() {
    let out = tempfile::tempdir().unwrap();
    let cfg = identity_config(&fixtures(), out.path());
    let first = run_pipeline(&cfg).unwrap();
    let records = read(&first.run_dir.join(RECORDS_FILE));
    let report = read(&first.run_dir.join(REPORT_JSON));
    let second = run_pipeline(&cfg).unwrap();
    assert_eq!((second.processed, second.skipped), (0, 5));
    assert_eq!(read(&second.run_dir.join(RECORDS_FILE)), records);
    assert_eq!(read(&second.run_dir.join(REPORT_JSON)), report);
}

#[test]
fn resume_after_torn_write() {
    let out = tempfile::tempdir().unwrap();
    let cfg = identity_config(&fixtures(), out.path());
    let first = run_pipeline(&cfg).unwrap();
    let path = first.run_dir.join(RECORDS_FILE);
    let full = read(&path);
    let report = read(&first.run_dir.join(REPORT_JSON));
    // keep two whole records and half of the third
    let lines: Vec<&str> = full.lines().collect();
    let torn = format!(
        "{}\n{}\n{}",
        lines[0],
        lines[1],
        &lines[2][..lines[2].len() / 2]
    );
    std::fs::write(&path, torn).unwrap();
    let second = run_pipeline(&cfg).unwrap();
    assert_eq!((second.processed, second.skipped), (3, 2));
    assert_eq!(read(&first.run_dir.join(REPORT_JSON)), report);
    let reloaded = load_records(&path);
    assert!(matches!(
        reloaded,
        Err(PipelineError::BadRecord { line: 3, .. })
    ));
}

fn copy_with_failing_doc(dir: &Path) {
    for entry in std::fs::read_dir(fixtures()).unwrap() {
        let p = entry.unwrap().path();
        std::fs::copy(&p, dir.join(p.file_name().unwrap())).unwrap();
    }
    let doc = Document::from_texts(
        "nda_zulu",
        &[(
            "MOCK_ALWAYS_FAIL This clause makes every backend call fail.",
            &[14u8][..],
        )],
    )
    .unwrap();
    std::fs::write(dir.join("nda_zulu.txt"), serialize_document(&doc)).unwrap();
    std::fs::remove_file(dir.join("nda_echo.txt")).unwrap();
}

#[test]
fn failing_document_is_contained() {
    let corpus = tempfile::tempdir().unwrap();
    copy_with_failing_doc(corpus.path());
    let out = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&identity_config(corpus.path(), out.path())).unwrap();
    assert!(summary.has_failures());
    let records = load_records(&summary.run_dir.join(RECORDS_FILE)).unwrap();
    let complete = records
        .iter()
        .filter(|r| r.status == RecordStatus::Complete)
        .count();
    assert_eq!((records.len(), complete), (5, 4));
    assert_eq!(summary.report.failures[0].document_id, "nda_zulu");
    assert!(summary.report.failures[0].error.contains("attempts"));
}

#[test]
fn offline_evaluation_reproduces_run_report() {
    let out = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&identity_config(&fixtures(), out.path())).unwrap();
    let outcome =
        evaluate_offline(&summary.run_dir, &fixtures(), &EvaluateOptions::default()).unwrap();
    let eval_dir = tempfile::tempdir().unwrap();
    clausepipe_core::pipeline::write_report(eval_dir.path(), &outcome.report).unwrap();
    for file in [REPORT_JSON, REPORT_TXT] {
        assert_eq!(
            read(&summary.run_dir.join(file)),
            read(&eval_dir.path().join(file)),
            "{file}"
        );
    }
}

#[test]
fn predictions_equal_to_references_are_perfect() {
    let outcome = evaluate_offline(&fixtures(), &fixtures(), &EvaluateOptions::default()).unwrap();
    for row in &outcome.report.document_level {
        assert_eq!(row.summary.unwrap().mean, 1.0);
    }
    let c = outcome.report.classification.as_ref().unwrap().metrics;
    assert_eq!((c.hamming_loss, c.mcc), (0.0, 1.0));
    assert!(outcome
        .report
        .row("factual_correctness", true)
        .unwrap()
        .summary
        .is_none());
}

#[test]
fn orphan_ids_are_rejected() {
    let preds = tempfile::tempdir().unwrap();
    let corpus = load_corpus_dir(&fixtures()).unwrap();
    for doc in corpus.documents.iter().skip(1) {
        std::fs::write(
            preds.path().join(format!("{}.txt", doc.id)),
            serialize_document(doc),
        )
        .unwrap();
    }
    let err = evaluate_offline(preds.path(), &fixtures(), &EvaluateOptions::default()).unwrap_err();
    match &err {
        PipelineError::OrphanDocuments {
            missing_predictions,
            unknown_predictions,
        } => {
            assert_eq!(missing_predictions, &vec!["nda_alpha".to_string()]);
            assert!(unknown_predictions.is_empty());
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let corpus = tempfile::tempdir().unwrap();
    std::fs::write(corpus.path().join("bad.txt"), "[INIT_CLAUSE]\nunterminated").unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = run_pipeline(&identity_config(corpus.path(), out.path())).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let mut cfg = identity_config(&fixtures(), out.path());
    cfg.workers = 0;
    assert_eq!(run_pipeline(&cfg).unwrap_err().exit_code(), 1);
}
