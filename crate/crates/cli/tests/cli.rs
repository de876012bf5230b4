use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clausepipe"))
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn mock_config(dir: &Path, corpus: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "run_id": "t",
        "corpus_dir": corpus,
        "out_dir": dir.join("runs"),
        "clock": "fixed",
        "backends": {
            "segmenter": {"base_url": "mock:echo-segment", "model_name": "seg", "backoff_base_ms": 1},
            "classifier": {"base_url": "mock:oracle", "model_name": "cls", "backoff_base_ms": 1},
            "embedder": {"base_url": "mock:hash-embed", "model_name": "emb", "backoff_base_ms": 1},
            "judge": {"base_url": "mock:verbatim-judge", "model_name": "judge", "backoff_base_ms": 1}
        }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn help_documents_every_flag() {
    let expected: &[(&str, &[&str])] = &[
        ("parse", &["--input", "--report"]),
        (
            "split",
            &[
                "--input",
                "--out",
                "--train",
                "--test",
                "--validation",
                "--seed",
            ],
        ),
        (
            "run",
            &[
                "--config",
                "--out",
                "--seed",
                "--workers",
                "--backend.segmenter.url",
                "--backend.classifier.url",
                "--backend.embedder.url",
                "--backend.judge.url",
                "--threshold.filter",
                "--threshold.decision",
            ],
        ),
        (
            "evaluate",
            &[
                "--predictions",
                "--references",
                "--config",
                "--out",
                "--threshold.filter",
            ],
        ),
    ];
    for (sub, flags) in expected {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help");
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in *flags {
            assert!(text.contains(flag), "{sub} --help lacks {flag}");
        }
    }
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
}

#[test]
fn parse_governing_law_fixture() {
    let out = run(&[
        "parse",
        "--input",
        s(&root().join("fixtures/governing_law")),
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["stats"]["documents"], 1);
    assert_eq!(v["stats"]["clauses"], 1);
    assert_eq!(v["stats"]["label_counts"]["13"], 1);
}

#[test]
fn parse_empty_and_partially_malformed_dirs() {
    let empty = tempfile::tempdir().unwrap();
    let report = empty.path().join("out/stats.json");
    let out = run(&["parse", "--input", s(empty.path()), "--report", s(&report)]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["stats"]["documents"], 0);
    assert_eq!(v["stats"]["clauses"], 0);

    let mixed = tempfile::tempdir().unwrap();
    for name in ["nda_alpha.txt", "nda_bravo.txt"] {
        std::fs::copy(
            root().join("fixtures/nda").join(name),
            mixed.path().join(name),
        )
        .unwrap();
    }
    std::fs::write(
        mixed.path().join("broken.txt"),
        "[INIT_CLAUSE]\nno end\n[INIT_CLAUSE]\nx\n[END_CLAUSE]\n[END_CLAUSE]\n[END_CLAUSE]",
    )
    .unwrap();
    let out = run(&["parse", "--input", s(mixed.path())]);
    assert_eq!(code(&out), 2);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["stats"]["documents"], 2);
    assert_eq!(v["failures"].as_array().unwrap().len(), 1);
    assert_eq!(v["failures"][0]["file"], "broken.txt");

    assert_eq!(code(&run(&["parse", "--input", "/definitely/not/here"])), 1);
}

#[test]
fn split_is_deterministic_and_respects_fractions() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let input = root().join("fixtures/nda");
    for dir in [a.path(), b.path()] {
        let out = run(&[
            "split",
            "--input",
            s(&input),
            "--out",
            s(dir),
            "--seed",
            "11",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = |d: &Path| std::fs::read_to_string(d.join("manifest.json")).unwrap();
    assert_eq!(manifest(a.path()), manifest(b.path()));
    for f in ["train.txt", "validation.txt", "test.txt"] {
        assert!(a.path().join(f).is_file());
    }

    // 10 single-clause documents split in half
    let ten = tempfile::tempdir().unwrap();
    for i in 0..10 {
        let label = if i % 2 == 0 { 4 } else { 14 };
        std::fs::write(
            ten.path().join(format!("d{i}.txt")),
            format!("[INIT_CLAUSE]\nClause number {i}.\n[INIT_CLASSE]{label}[END_CLASSE]\n[END_CLAUSE]\n"),
        )
        .unwrap();
    }
    let out_dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "split",
        "--input",
        s(ten.path()),
        "--out",
        s(out_dir.path()),
        "--train",
        "0.5",
        "--test",
        "0.5",
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&manifest(out_dir.path())).unwrap();
    let size = |k: &str| v["subsets"][k]["size"].as_u64().unwrap();
    assert_eq!(size("train") + size("validation"), 5);
    assert_eq!(size("test"), 5);

    let bad = run(&[
        "split",
        "--input",
        s(&input),
        "--out",
        s(out_dir.path()),
        "--train",
        "0.7",
        "--test",
        "0.7",
    ]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn run_and_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = root().join("fixtures/nda");
    let cfg = mock_config(dir.path(), &fixtures);
    let out = run(&["run", "--config", s(&cfg), "--workers", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    for row in [
        "ROUGE-Recall",
        "ROUGE-Precision",
        "ROUGE-F1-Score",
        "Factual Correctness",
        "Semantic Similarity",
    ] {
        assert!(table.contains(row), "missing row {row}");
    }
    let run_dir = dir.path().join("runs/t");
    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "evaluate",
        "--predictions",
        s(&run_dir),
        "--references",
        s(&fixtures),
        "--out",
        s(&eval_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "report.txt"] {
        assert_eq!(
            std::fs::read(run_dir.join(f)).unwrap(),
            std::fs::read(eval_dir.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn evaluate_rejects_missing_documents() {
    let preds = tempfile::tempdir().unwrap();
    let fixtures = root().join("fixtures/nda");
    for name in ["nda_alpha.txt", "nda_bravo.txt"] {
        std::fs::copy(fixtures.join(name), preds.path().join(name)).unwrap();
    }
    let out = run(&[
        "evaluate",
        "--predictions",
        s(preds.path()),
        "--references",
        s(&fixtures),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nda_charlie"));
}

#[test]
fn run_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(dir.path(), &root().join("fixtures/nda"));
    let out = run(&["run", "--config", s(&cfg), "--threshold.decision", "1.5"]);
    assert_eq!(code(&out), 1);
    let out = run(&[
        "run",
        "--config",
        s(&cfg),
        "--backend.segmenter.url",
        "mock:no-such-mode",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(
        code(&run(&[
            "run",
            "--config",
            s(&dir.path().join("missing.json"))
        ])),
        1
    );
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn in_process_entry_point() {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = clausepipe_cli::run_cli(["clausepipe", "evaluate", "--help"], &mut out, &mut err);
    assert_eq!(code, 0);
    assert!(String::from_utf8(out).unwrap().contains("--predictions"));
}
