use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::alignment::{AlignmentConfig, DEFAULT_FILTER_THRESHOLD, DEFAULT_GAP_PENALTY};
use crate::gateway::BackendConfig;
use crate::metrics::DEFAULT_LEVEL;
use crate::prompts::{sha256_hex, PromptTemplate};
use crate::semantic::ScoreMode;

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backends {
    pub segmenter: BackendConfig,
    pub classifier: BackendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptPaths {
    pub segmentation: Option<PathBuf>,
    pub decompose: Option<PathBuf>,
    pub verify: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Strict lower bound on aligned-pair similarity for segment metrics.
    pub filter: f64,
    /// Probability at or above which a label is assigned.
    pub decision: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            filter: DEFAULT_FILTER_THRESHOLD,
            decision: DEFAULT_DECISION_THRESHOLD,
        }
    }
}

/// Source of record timestamps. `fixed` writes 0 so that repeated runs
/// produce byte-identical records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    #[default]
    Wall,
    Fixed,
}

impl Clock {
    pub fn now_ms(self) -> u64 {
        match self {
            Clock::Fixed => 0,
            Clock::Wall => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub corpus_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub backends: Backends,
    #[serde(default)]
    pub prompts: PromptPaths,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_gap_penalty")]
    pub gap_penalty: f64,
    #[serde(default = "default_level")]
    pub confidence_level: f64,
    #[serde(default)]
    pub factual_mode: ScoreMode,
    #[serde(default)]
    pub clock: Clock,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_workers() -> usize {
    4
}

fn default_gap_penalty() -> f64 {
    DEFAULT_GAP_PENALTY
}

fn default_level() -> f64 {
    DEFAULT_LEVEL
}

/// The three templates a run uses.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub segmentation: PromptTemplate,
    pub decompose: PromptTemplate,
    pub verify: PromptTemplate,
}

impl PromptSet {
    /// Digest over all three template hashes, stored in every run record.
    pub fn hash(&self) -> String {
        let joined = format!(
            "{}:{}:{}",
            self.segmentation.hash, self.decompose.hash, self.verify.hash
        );
        sha256_hex(joined.as_bytes())[..16].to_string()
    }
}

impl PipelineConfig {
    /// A config with the given corpus and backends and defaults elsewhere.
    pub fn new(corpus_dir: impl Into<PathBuf>, backends: Backends) -> Self {
        PipelineConfig {
            run_id: None,
            corpus_dir: corpus_dir.into(),
            out_dir: default_out_dir(),
            seed: 0,
            workers: default_workers(),
            backends,
            prompts: PromptPaths::default(),
            thresholds: Thresholds::default(),
            gap_penalty: DEFAULT_GAP_PENALTY,
            confidence_level: DEFAULT_LEVEL,
            factual_mode: ScoreMode::default(),
            clock: Clock::default(),
        }
    }

    /// Reads a JSON config. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative_to(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_dir);
        fix(&mut self.out_dir);
        for p in [
            &mut self.prompts.segmentation,
            &mut self.prompts.decompose,
            &mut self.prompts.verify,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            gap_penalty: self.gap_penalty,
            filter_threshold: self.thresholds.filter,
            ..AlignmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::Config(m));
        if self.workers == 0 {
            return invalid("workers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.thresholds.decision) {
            return invalid(format!(
                "decision threshold {} outside [0, 1]",
                self.thresholds.decision
            ));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return invalid(format!(
                "confidence level {} outside (0, 1)",
                self.confidence_level
            ));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                return invalid(format!("run id {id:?} is not a plain directory name"));
            }
        }
        self.alignment()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let backends = [
            Some(&self.backends.segmenter),
            Some(&self.backends.classifier),
            self.backends.embedder.as_ref(),
            self.backends.judge.as_ref(),
        ];
        for b in backends.into_iter().flatten() {
            b.validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn prompt_set(&self) -> Result<PromptSet, PipelineError> {
        let load =
            |path: &Option<PathBuf>, default: fn() -> PromptTemplate, slots: &[&str]| match path {
                Some(p) => PromptTemplate::load(p, slots),
                None => Ok(default()),
            };
        Ok(PromptSet {
            segmentation: load(
                &self.prompts.segmentation,
                PromptTemplate::segmentation,
                &["document"],
            )?,
            decompose: load(
                &self.prompts.decompose,
                PromptTemplate::decompose,
                &["text"],
            )?,
            verify: load(
                &self.prompts.verify,
                PromptTemplate::verify,
                &["claim", "context"],
            )?,
        })
    }

    /// Explicit run id, or a digest of the config so that re-running the
    /// same config resumes the same run directory.
    pub fn effective_run_id(&self) -> String {
        if let Some(id) = &self.run_id {
            return id.clone();
        }
        let json = serde_json::to_string(self).unwrap_or_default();
        format!("run-{}", &sha256_hex(json.as_bytes())[..12])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.effective_run_id())
    }
}
