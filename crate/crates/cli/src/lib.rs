//! `clausepipe` command line: corpus stats, stratified splits, pipeline
//! runs and offline re-scoring.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use clausepipe_core::corpus::{
    corpus_stats, label_proportions, load_corpus_dir, serialize_document,
    stratified_multilabel_split, Clause, ClauseLabel, CorpusError, Document, SplitFractions,
};
use clausepipe_core::gateway::BackendConfig;
use clausepipe_core::pipeline::{
    evaluate_offline, render_table, run_pipeline, write_report, EvaluateOptions, PipelineConfig,
    PipelineError,
};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "clausepipe",
    version,
    about = "Segment, classify and evaluate NDA clauses"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an annotated corpus directory and write corpus statistics.
    Parse(ParseArgs),
    /// Split the clauses of a corpus into train, validation and test sets.
    Split(SplitArgs),
    /// Run segmentation, classification and evaluation over a corpus.
    Run(RunArgs),
    /// Re-score existing predictions against references without model calls.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Directory of annotated `.txt` files.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Where to write the JSON statistics; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Directory of annotated `.txt` files.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output directory for train.txt, validation.txt, test.txt and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of clauses for the training pool.
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    /// Fraction of clauses for the test set.
    #[arg(long, default_value_t = 0.2)]
    pub test: f64,
    /// Fraction of the training pool carved out for validation.
    #[arg(long, default_value_t = 0.1)]
    pub validation: f64,
    /// Seed for tie-breaking.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Override the seed recorded in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of documents processed concurrently.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Segmenter backend URL (`mock:<mode>` for an offline mock).
    #[arg(long = "backend.segmenter.url", value_name = "URL")]
    pub segmenter_url: Option<String>,
    /// Classifier backend URL.
    #[arg(long = "backend.classifier.url", value_name = "URL")]
    pub classifier_url: Option<String>,
    /// Embedding backend URL; enables semantic similarity.
    #[arg(long = "backend.embedder.url", value_name = "URL")]
    pub embedder_url: Option<String>,
    /// Judge backend URL; enables factual correctness.
    #[arg(long = "backend.judge.url", value_name = "URL")]
    pub judge_url: Option<String>,
    /// Aligned pairs must score strictly above this to be evaluated.
    #[arg(long = "threshold.filter", value_name = "SCORE")]
    pub filter: Option<f64>,
    /// Probability at or above which a label is assigned.
    #[arg(long = "threshold.decision", value_name = "PROB")]
    pub decision: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Pipeline config (JSON).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Directory that holds run directories.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run id; defaults to the config's, or a digest of the config.
    #[arg(long)]
    pub run_id: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// records.jsonl, a run directory, or a directory of annotated prediction files.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Directory of annotated reference files; defaults to the config's corpus.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Pipeline config supplying thresholds, gap penalty and confidence level.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Directory for report.json and report.txt; the table goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Aligned pairs must score strictly above this to be evaluated.
    #[arg(long = "threshold.filter", value_name = "SCORE")]
    pub filter: Option<f64>,
    /// Confidence level of the reported intervals.
    #[arg(long)]
    pub level: Option<f64>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let code = match e {
            CorpusError::Io { .. } => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Parse(a) => cmd_parse(&a, out, err),
        Command::Split(a) => cmd_split(&a, out),
        Command::Run(a) => cmd_run(&a, out, err),
        Command::Evaluate(a) => cmd_evaluate(&a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::config(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    s
}

fn cmd_parse(args: &ParseArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    if !args.input.is_dir() {
        return Err(Failure::config(format!(
            "{} is not a directory",
            args.input.display()
        )));
    }
    let corpus = load_corpus_dir(&args.input)?;
    let failures: Vec<_> = corpus
        .failures
        .iter()
        .map(|(path, e)| {
            let _ = writeln!(err, "{}: {e}", path.display());
            json!({
                "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
                "error": e.to_string(),
            })
        })
        .collect();
    let report = pretty(&json!({
        "stats": corpus_stats(&corpus.documents),
        "failures": failures,
    }));
    match &args.report {
        Some(path) => write_file(path, &report)?,
        None => out
            .write_all(report.as_bytes())
            .map_err(|e| Failure::config(e.to_string()))?,
    }
    Ok(if corpus.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_DATA
    })
}

fn cmd_split(args: &SplitArgs, out: &mut dyn Write) -> Outcome {
    let fractions = SplitFractions {
        train: args.train,
        test: args.test,
        validation_of_train: args.validation,
    };
    fractions
        .validate()
        .map_err(|e| Failure::config(e.to_string()))?;
    if !args.input.is_dir() {
        return Err(Failure::config(format!(
            "{} is not a directory",
            args.input.display()
        )));
    }
    let corpus = load_corpus_dir(&args.input)?;
    if let Some((path, e)) = corpus.failures.first() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        });
    }
    let mut clauses: Vec<Clause> = Vec::new();
    let mut origin: Vec<String> = Vec::new();
    for doc in &corpus.documents {
        for clause in &doc.clauses {
            origin.push(format!("{}#{}", doc.id, clause.index));
            clauses.push(clause.clone());
        }
    }
    let split = stratified_multilabel_split(&clauses, fractions, args.seed)?;
    let mut subsets = serde_json::Map::new();
    for (name, members) in [
        ("train", &split.train),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        let doc = Document::new(name, members.iter().map(|&i| clauses[i].clone()).collect());
        write_file(
            &args.out.join(format!("{name}.txt")),
            &serialize_document(&doc),
        )?;
        let proportions: serde_json::Map<_, _> = ClauseLabel::all()
            .zip(label_proportions(&clauses, members))
            .map(|(label, p)| (label.id().to_string(), json!(p)))
            .collect();
        subsets.insert(
            name.to_string(),
            json!({
                "size": members.len(),
                "label_proportions": proportions,
                "clauses": members.iter().map(|&i| origin[i].as_str()).collect::<Vec<_>>(),
            }),
        );
    }
    let all: Vec<usize> = (0..clauses.len()).collect();
    let overall: serde_json::Map<_, _> = ClauseLabel::all()
        .zip(label_proportions(&clauses, &all))
        .map(|(label, p)| (label.id().to_string(), json!(p)))
        .collect();
    let manifest = pretty(&json!({
        "seed": split.seed,
        "fractions": {
            "train": fractions.train,
            "test": fractions.test,
            "validation_of_train": fractions.validation_of_train,
        },
        "clauses": clauses.len(),
        "label_proportions": overall,
        "absent_labels": split.absent_labels.iter().map(|l| l.id()).collect::<Vec<_>>(),
        "subsets": subsets,
    }));
    write_file(&args.out.join("manifest.json"), &manifest)?;
    let (train, validation, test) = split.sizes();
    let _ = writeln!(out, "train {train}, validation {validation}, test {test}");
    Ok(EXIT_OK)
}

fn set_url(slot: &mut BackendConfig, url: &Option<String>) {
    if let Some(url) = url {
        slot.base_url = url.clone();
    }
}

fn optional_backend(slot: &mut Option<BackendConfig>, url: &Option<String>, model: &str) {
    if let Some(url) = url {
        match slot {
            Some(cfg) => cfg.base_url = url.clone(),
            None => {
                *slot = Some(BackendConfig {
                    base_url: url.clone(),
                    model_name: model.to_string(),
                    ..BackendConfig::default()
                })
            }
        }
    }
}

/// Applies command-line overrides on top of the file config.
pub fn apply_overrides(cfg: &mut PipelineConfig, o: &Overrides) {
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = o.workers {
        cfg.workers = workers;
    }
    set_url(&mut cfg.backends.segmenter, &o.segmenter_url);
    set_url(&mut cfg.backends.classifier, &o.classifier_url);
    optional_backend(&mut cfg.backends.embedder, &o.embedder_url, "embedder");
    optional_backend(&mut cfg.backends.judge, &o.judge_url, "judge");
    if let Some(filter) = o.filter {
        cfg.thresholds.filter = filter;
    }
    if let Some(decision) = o.decision {
        cfg.thresholds.decision = decision;
    }
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let mut cfg = PipelineConfig::load(&args.config)?;
    apply_overrides(&mut cfg, &args.overrides);
    if let Some(dir) = &args.out {
        cfg.out_dir = dir.clone();
    }
    if let Some(id) = &args.run_id {
        cfg.run_id = Some(id.clone());
    }
    let summary = run_pipeline(&cfg)?;
    let _ = writeln!(
        out,
        "run {}: {} processed, {} reused, {} failed -> {}",
        summary.run_id,
        summary.processed,
        summary.skipped,
        summary.report.failed,
        summary.run_dir.display()
    );
    let _ = writeln!(out);
    let _ = out.write_all(render_table(&summary.report).as_bytes());
    if summary.has_failures() {
        let _ = writeln!(err, "{} document(s) failed", summary.report.failed);
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let cfg = args
        .config
        .as_deref()
        .map(PipelineConfig::load)
        .transpose()?;
    let mut opts = EvaluateOptions::default();
    if let Some(cfg) = &cfg {
        opts.alignment = cfg.alignment();
        opts.level = cfg.confidence_level;
    }
    if let Some(filter) = args.filter {
        opts.alignment.filter_threshold = filter;
    }
    if let Some(level) = args.level {
        opts.level = level;
    }
    let references = args
        .references
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.corpus_dir.clone()))
        .ok_or_else(|| Failure::config("--references or --config is required"))?;
    let outcome = evaluate_offline(&args.predictions, &references, &opts)?;
    match &args.out {
        Some(dir) => {
            write_report(dir, &outcome.report)?;
            let _ = writeln!(out, "report written to {}", dir.display());
        }
        None => {
            let _ = out.write_all(render_table(&outcome.report).as_bytes());
        }
    }
    if outcome.report.failed > 0 {
        let _ = writeln!(
            err,
            "{} document(s) have failed records",
            outcome.report.failed
        );
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}
