//! Run configuration, loaded from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use surveyor_core::analysis::AnalysisConfig;
use surveyor_core::code_analysis::CodeAnalysisConfig;
use surveyor_core::gateway::{BackendProfile, DEFAULT_RETRYABLE};
use surveyor_core::model::stable_hash;
use surveyor_core::refinement::RefinementConfig;
use surveyor_core::retrieval::RetrievalConfig;
use surveyor_core::understanding::UnderstandingConfig;
use surveyor_core::writing::WritingConfig;
use surveyor_eval::{EvalConfig, PremiseSource};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Deterministic in-process responder; needs no network or key.
    #[default]
    Offline,
    /// OpenAI-compatible chat and embedding endpoints.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    pub embedding_base_url: String,
    pub embedding_model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Dimension of the offline hashing embedder.
    pub offline_embedding_dim: usize,
    pub context_window: usize,
    pub retryable_statuses: BTreeSet<u16>,
    pub max_attempts: u32,
    pub backoff_min_secs: f64,
    pub backoff_max_secs: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let profile = BackendProfile::default();
        Self {
            kind: BackendKind::Offline,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            embedding_base_url: "https://api.openai.com/v1".into(),
            embedding_model: "text-embedding-3-small".into(),
            api_key_env: "SURVEYOR_API_KEY".into(),
            timeout_secs: 300,
            offline_embedding_dim: 256,
            context_window: profile.context_window,
            retryable_statuses: DEFAULT_RETRYABLE.iter().copied().collect(),
            max_attempts: profile.max_attempts,
            backoff_min_secs: profile.backoff_bounds.0,
            backoff_max_secs: profile.backoff_bounds.1,
        }
    }
}

impl BackendConfig {
    pub fn profile(&self) -> BackendProfile {
        BackendProfile {
            context_window: self.context_window,
            retryable_statuses: self.retryable_statuses.clone(),
            max_attempts: self.max_attempts,
            backoff_bounds: (self.backoff_min_secs, self.backoff_max_secs),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// A local JSON corpus of paper records.
    Fixture,
    #[default]
    SemanticScholar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub fixture: Option<PathBuf>,
    pub base_url: String,
    /// Optional environment variable with a Semantic Scholar key.
    pub api_key_env: Option<String>,
    pub arxiv_fallback: bool,
    pub arxiv_url: String,
    pub timeout_secs: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::SemanticScholar,
            fixture: None,
            base_url: "https://api.semanticscholar.org/graph/v1".into(),
            api_key_env: Some("S2_API_KEY".into()),
            arxiv_fallback: true,
            arxiv_url: "http://export.arxiv.org/api/query".into(),
            timeout_secs: 60,
        }
    }
}

/// Which stages run. Code analysis has its own switch in its section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageFlags {
    pub retrieval: bool,
    pub understanding: bool,
    pub analysis: bool,
    pub writing: bool,
    pub refinement: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self {
            retrieval: true,
            understanding: true,
            analysis: true,
            writing: true,
            refinement: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub premise: PremiseSource,
    pub workers: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        Self {
            premise: d.premise,
            workers: d.workers,
        }
    }
}

impl From<EvaluationSection> for EvalConfig {
    fn from(s: EvaluationSection) -> Self {
        EvalConfig {
            premise: s.premise,
            workers: s.workers,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub topic: String,
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/substrate`.
    pub substrate_dir: Option<PathBuf>,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Defaults to `<output_dir>/checkpoint.json`.
    pub checkpoint_path: Option<PathBuf>,
    /// Cached responses older than this are ignored; zero keeps them forever.
    pub cache_ttl_secs: u64,
    /// Directory of checked-out repositories, one per repository name.
    pub repo_root: Option<PathBuf>,
    pub stages: StageFlags,
    pub backend: BackendConfig,
    pub source: SourceConfig,
    pub retrieval: RetrievalConfig,
    pub understanding: UnderstandingConfig,
    pub analysis: AnalysisConfig,
    pub code_analysis: CodeAnalysisConfig,
    pub writing: WritingConfig,
    pub refinement: RefinementConfig,
    pub evaluation: EvaluationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            topic: String::new(),
            workers: 4,
            output_dir: PathBuf::from("surveyor-out"),
            substrate_dir: None,
            cache_dir: None,
            checkpoint_path: None,
            cache_ttl_secs: 0,
            repo_root: None,
            stages: StageFlags::default(),
            backend: BackendConfig::default(),
            source: SourceConfig::default(),
            retrieval: RetrievalConfig::default(),
            understanding: UnderstandingConfig::default(),
            analysis: AnalysisConfig::default(),
            code_analysis: CodeAnalysisConfig::default(),
            writing: WritingConfig::default(),
            refinement: RefinementConfig::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serialises to TOML")
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.substrate_dir,
            &mut self.cache_dir,
            &mut self.checkpoint_path,
            &mut self.repo_root,
            &mut self.source.fixture,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Moves every output location under `dir`.
    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output_dir = dir.into();
        self.substrate_dir = None;
        self.cache_dir = None;
        self.checkpoint_path = None;
        self
    }

    pub fn substrate_dir(&self) -> PathBuf {
        self.substrate_dir.clone().unwrap_or_else(|| self.output_dir.join("substrate"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoint.json"))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.topic.trim().is_empty() {
            return bad("topic must not be empty".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.backend.kind == BackendKind::Http && self.backend.api_key_env.trim().is_empty() {
            return bad("backend.api_key_env must name an environment variable".into());
        }
        if self.backend.offline_embedding_dim == 0 {
            return bad("backend.offline_embedding_dim must be positive".into());
        }
        if self.source.kind == SourceKind::Fixture && self.source.fixture.is_none() {
            return bad("source.kind = \"fixture\" needs source.fixture".into());
        }
        if self.code_analysis.enabled && self.repo_root.is_none() {
            return bad("code analysis needs repo_root".into());
        }
        if self.evaluation.workers == 0 {
            return bad("evaluation.workers must be at least 1".into());
        }
        let stage = |r: surveyor_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        stage(self.backend.profile().validate())?;
        stage(self.retrieval.validate())?;
        stage(self.analysis.validate())?;
        stage(self.code_analysis.validate())?;
        stage(self.writing.validate())?;
        stage(self.refinement.validate())?;
        Ok(())
    }

    /// Hash of everything that shapes the output. Locations and the worker
    /// count are left out, so moving a run directory keeps it resumable.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("configuration serialises to JSON");
        if let Some(map) = v.as_object_mut() {
            for k in ["output_dir", "substrate_dir", "cache_dir", "checkpoint_path", "workers", "evaluation"] {
                map.remove(k);
            }
        }
        // serde_json maps are ordered by key, so this text is canonical.
        stable_hash(&v.to_string())
    }
}
