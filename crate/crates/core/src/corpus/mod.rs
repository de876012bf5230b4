//! Annotated NDA corpus: file format, taxonomy, statistics and splitting.

mod format;
mod label;
mod split;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{
    extract_clause_blocks, parse_annotated_document, serialize_document, Clause, Document,
    LabelSet, END_CLASSE, END_CLAUSE, INIT_CLASSE, INIT_CLAUSE,
};
pub use label::{ClauseLabel, NUM_LABELS};
pub use split::{
    is_partition, label_proportions, stratified_multilabel_split, CorpusSplit, SplitFractions,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unbalanced delimiter at byte {offset}: {detail}")]
    UnbalancedDelimiter { offset: usize, detail: String },
    #[error("invalid label {token:?} in block {block}")]
    InvalidLabel { token: String, block: usize },
    #[error("clause text of block {block} is empty")]
    EmptyClauseText { block: usize },
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("invalid split fraction: {0}")]
    InvalidFraction(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Document/clause counts and the per-label histogram of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub clauses: usize,
    pub label_instances: usize,
    pub unlabeled_clauses: usize,
    /// Keyed by label id, always containing all 14 labels.
    pub label_counts: BTreeMap<u8, usize>,
    /// Share of all label instances carried by each label.
    pub label_frequency: BTreeMap<u8, f64>,
}

pub fn corpus_stats(docs: &[Document]) -> CorpusStats {
    let mut label_counts: BTreeMap<u8, usize> = ClauseLabel::all().map(|l| (l.id(), 0)).collect();
    let mut clauses = 0;
    let mut unlabeled_clauses = 0;
    for clause in docs.iter().flat_map(|d| &d.clauses) {
        clauses += 1;
        if clause.labels.is_empty() {
            unlabeled_clauses += 1;
        }
        for label in &clause.labels {
            *label_counts.entry(label.id()).or_default() += 1;
        }
    }
    let label_instances: usize = label_counts.values().sum();
    let label_frequency = label_counts
        .iter()
        .map(|(&id, &n)| {
            let freq = if label_instances == 0 {
                0.0
            } else {
                n as f64 / label_instances as f64
            };
            (id, freq)
        })
        .collect();
    CorpusStats {
        documents: docs.len(),
        clauses,
        label_instances,
        unlabeled_clauses,
        label_counts,
        label_frequency,
    }
}

/// Result of ingesting a directory: parsed documents plus per-file failures.
#[derive(Debug, Default)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub failures: Vec<(PathBuf, CorpusError)>,
}

/// `.txt` files directly inside `dir`, in lexicographic filename order.
pub fn list_corpus_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_document(path: &Path) -> Result<Document, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_annotated_document(&text, &id)
}

/// Parses every `.txt` file in `dir`. Parse failures are collected rather
/// than aborting the load; only failing to list the directory is an error.
pub fn load_corpus_dir(dir: &Path) -> Result<LoadedCorpus, CorpusError> {
    let mut loaded = LoadedCorpus::default();
    for path in list_corpus_files(dir)? {
        match load_document(&path) {
            Ok(doc) => loaded.documents.push(doc),
            Err(err) => loaded.failures.push((path, err)),
        }
    }
    Ok(loaded)
}
