//! The stage driver: runs each enabled stage in order, persisting the
//! substrate and a checkpoint after every one, then assembles the survey.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use surveyor_core::analysis::{export_tables, run_analysis};
use surveyor_core::code_analysis::{run_code_analysis, DirectoryFetcher, RepoFetcher};
use surveyor_core::gateway::{
    EmbeddingBackend, Gateway, HashEmbedder, HttpChatBackend, HttpEmbeddingBackend, ResponseCache, Sleeper,
    StatsSnapshot, TaskCache, TextBackend,
};
use surveyor_core::model::KnowledgeSubstrate;
use surveyor_core::offline::OfflineBackend;
use surveyor_core::refinement::run_refinement;
use surveyor_core::retrieval::{run_retrieval, ArxivSource, FixtureSource, PaperSource, SemanticScholarSource};
use surveyor_core::understanding::run_understanding;
use surveyor_core::writing::{assemble_survey, run_writing, SurveyMeta};
use surveyor_core::Context;
use tracing::info;

use crate::checkpoint::{Checkpoint, Stage};
use crate::config::{BackendKind, PipelineConfig, SourceKind};
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const TABLES_DIR: &str = "tables";
pub const TRANSCRIPTS_DIR: &str = "transcripts";

/// Everything the pipeline talks to. Built from the configuration for real
/// runs; tests assemble their own.
pub struct Services {
    pub text: Arc<dyn TextBackend>,
    pub embedder: Arc<dyn EmbeddingBackend>,
    pub source: Box<dyn PaperSource>,
    pub fallback: Option<Box<dyn PaperSource>>,
    pub repos: Box<dyn RepoFetcher>,
    pub sleeper: Option<Arc<dyn Sleeper>>,
}

impl Services {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let (text, embedder) = model_backends(cfg)?;
        let src = &cfg.source;
        let timeout = Duration::from_secs(src.timeout_secs);
        let source: Box<dyn PaperSource> = match src.kind {
            SourceKind::Fixture => {
                let path = src
                    .fixture
                    .as_deref()
                    .ok_or_else(|| CliError::Config("source.fixture is not set".into()))?;
                Box::new(FixtureSource::load(path).map_err(|e| CliError::Config(e.to_string()))?)
            }
            SourceKind::SemanticScholar => Box::new(
                SemanticScholarSource::new(&src.base_url, src.api_key_env.as_deref(), timeout)
                    .map_err(|e| CliError::Config(e.to_string()))?,
            ),
        };
        let fallback: Option<Box<dyn PaperSource>> = if src.arxiv_fallback && src.kind != SourceKind::Fixture {
            Some(Box::new(
                ArxivSource::new(&src.arxiv_url, timeout).map_err(|e| CliError::Config(e.to_string()))?,
            ))
        } else {
            None
        };
        Ok(Self {
            text,
            embedder,
            source,
            fallback,
            repos: Box::new(DirectoryFetcher::new(cfg.repo_root.clone().unwrap_or_default())),
            sleeper: None,
        })
    }
}

/// The text and embedding backends named by the configuration.
pub fn model_backends(cfg: &PipelineConfig) -> Result<(Arc<dyn TextBackend>, Arc<dyn EmbeddingBackend>)> {
    let b = &cfg.backend;
    Ok(match b.kind {
        BackendKind::Offline => (
            Arc::new(OfflineBackend::new()),
            Arc::new(HashEmbedder::new(b.offline_embedding_dim)),
        ),
        BackendKind::Http => {
            let cfg_err = |e: surveyor_core::Error| CliError::Config(e.to_string());
            (
                Arc::new(HttpChatBackend::new(&b.base_url, &b.model, &b.api_key_env, b.timeout()).map_err(cfg_err)?),
                Arc::new(
                    HttpEmbeddingBackend::new(&b.embedding_base_url, &b.embedding_model, &b.api_key_env, b.timeout())
                        .map_err(cfg_err)?,
                ),
            )
        }
    })
}

pub fn build_gateway(
    cfg: &PipelineConfig,
    text: Arc<dyn TextBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    sleeper: Option<Arc<dyn Sleeper>>,
) -> Result<Arc<Gateway>> {
    let ttl = (cfg.cache_ttl_secs > 0).then(|| Duration::from_secs(cfg.cache_ttl_secs));
    let mut builder = Gateway::builder(text, embedder)
        .profile(cfg.backend.profile())
        .response_cache(ResponseCache::on_disk(cfg.cache_dir().join("responses"), ttl))
        .task_cache(TaskCache::on_disk(cfg.cache_dir().join("tasks")));
    if let Some(s) = sleeper {
        builder = builder.sleeper(s);
    }
    builder.build().map(Arc::new).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub resume: bool,
}

/// Audit record written next to the survey.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub topic: String,
    pub config_hash: String,
    pub generated_at: String,
    pub text_backend: String,
    pub embedding_backend: String,
    pub paper_source: String,
    pub stages_run: Vec<Stage>,
    pub stages_resumed: Vec<Stage>,
    pub papers: usize,
    pub keynotes: usize,
    pub clusters: usize,
    pub survey: Option<PathBuf>,
    pub citations: Option<PathBuf>,
    pub stats: StatsSnapshot,
    pub stage_seconds: BTreeMap<Stage, f64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub substrate: KnowledgeSubstrate,
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub context: Context,
}

impl RunOutcome {
    pub fn survey_path(&self) -> Option<&Path> {
        self.manifest.survey.as_deref()
    }
}

fn enabled(cfg: &PipelineConfig, stage: Stage) -> bool {
    let f = &cfg.stages;
    match stage {
        Stage::Retrieval => f.retrieval,
        Stage::Understanding => f.understanding,
        Stage::Analysis => f.analysis,
        Stage::CodeAnalysis => cfg.code_analysis.enabled,
        Stage::Writing => f.writing,
        Stage::Refinement => f.refinement,
    }
}

fn prepare_state(cfg: &PipelineConfig, hash: &str, opts: RunOptions) -> Result<(Checkpoint, KnowledgeSubstrate)> {
    let path = &cfg.checkpoint_path();
    let substrate_dir = cfg.substrate_dir();
    if opts.resume {
        if let Some(cp) = Checkpoint::load(path)? {
            cp.ensure_matches(path, hash)?;
            let substrate = if cp.completed_stages.is_empty() {
                KnowledgeSubstrate::new(cfg.topic.clone())
            } else {
                KnowledgeSubstrate::load(&cp.substrate_dir).map_err(|e| CliError::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("substrate cannot be restored: {e}"),
                })?
            };
            info!(completed = ?cp.completed_stages, "resuming from checkpoint");
            return Ok((cp, substrate));
        }
        info!("no checkpoint found; starting a fresh run");
    }
    // A fresh run must not inherit per-paper files from an older substrate.
    if substrate_dir.join("papers.json").exists() {
        std::fs::remove_dir_all(&substrate_dir)
            .map_err(|e| CliError::io(format!("clearing {}", substrate_dir.display()), e))?;
    }
    Ok((
        Checkpoint::new(substrate_dir, hash),
        KnowledgeSubstrate::new(cfg.topic.clone()),
    ))
}

fn run_stage(
    stage: Stage,
    cfg: &PipelineConfig,
    ctx: &Context,
    services: &Services,
    s: &mut KnowledgeSubstrate,
) -> surveyor_core::Result<()> {
    match stage {
        Stage::Retrieval => {
            let papers = run_retrieval(
                ctx,
                &cfg.topic,
                &cfg.retrieval,
                services.source.as_ref(),
                services.fallback.as_deref(),
            )?;
            for p in papers {
                s.insert_paper(p);
            }
        }
        Stage::Understanding => {
            let papers: Vec<_> = s.papers.values().cloned().collect();
            s.keynotes = run_understanding(ctx, &papers, &cfg.understanding);
        }
        Stage::Analysis => {
            run_analysis(ctx, s, &cfg.analysis)?;
            export_tables(&s.analyses, &cfg.output_dir.join(TABLES_DIR))?;
        }
        Stage::CodeAnalysis => run_code_analysis(ctx, s, services.repos.as_ref(), &cfg.code_analysis)?,
        Stage::Writing => run_writing(ctx, s, &cfg.writing)?,
        Stage::Refinement => {
            let report = run_refinement(ctx, s, cfg.writing.citation_style, &cfg.refinement)?;
            let dir = cfg.output_dir.join(TRANSCRIPTS_DIR);
            std::fs::create_dir_all(&dir).map_err(|e| surveyor_core::Error::io(&dir, e))?;
            for (name, text) in report.transcripts() {
                let path = dir.join(name);
                std::fs::write(&path, text).map_err(|e| surveyor_core::Error::io(&path, e))?;
            }
        }
    }
    Ok(())
}

/// Runs the pipeline. On failure the checkpoint reflects the last stage
/// that finished, so the run can be resumed.
pub fn run(cfg: &PipelineConfig, services: Services, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::io(format!("creating {}", cfg.output_dir.display()), e))?;
    let (mut checkpoint, mut substrate) = prepare_state(cfg, &hash, opts)?;
    checkpoint.save(&cfg.checkpoint_path())?;

    let gateway = build_gateway(cfg, services.text.clone(), services.embedder.clone(), services.sleeper.clone())?;
    let ctx = Context::new(gateway.clone()).with_workers(cfg.workers);

    let mut stages_run = Vec::new();
    let mut stages_resumed = Vec::new();
    let mut stage_seconds = BTreeMap::new();
    let mut flushed = 0;
    for stage in Stage::ALL {
        if !enabled(cfg, stage) {
            continue;
        }
        if checkpoint.is_done(stage) {
            info!(%stage, "already complete; skipping");
            stages_resumed.push(stage);
            continue;
        }
        let started = Instant::now();
        info!(%stage, "starting");
        let result = run_stage(stage, cfg, &ctx, &services, &mut substrate);
        append_events(&cfg.output_dir, &ctx, &mut flushed)?;
        result.map_err(|source| CliError::Stage { stage, source })?;
        substrate
            .save(&checkpoint.substrate_dir)
            .map_err(|source| CliError::Stage { stage, source })?;
        checkpoint.complete(stage);
        checkpoint.save(&cfg.checkpoint_path())?;
        let secs = started.elapsed().as_secs_f64();
        stage_seconds.insert(stage, secs);
        info!(%stage, seconds = secs, "finished");
        stages_run.push(stage);
    }

    let generated_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let (survey, citations) = match &substrate.outline {
        Some(outline) if !substrate.drafts.is_empty() => {
            let meta = SurveyMeta {
                topic: cfg.topic.clone(),
                generated_at: generated_at.clone(),
                config_hash: hash.clone(),
            };
            let assembled = assemble_survey(outline, &substrate.drafts, &substrate.papers, &substrate.keynotes, &meta)?;
            let (doc, cites) = assembled.write(&cfg.output_dir)?;
            (Some(doc), Some(cites))
        }
        _ => (None, None),
    };

    let (text_backend, embedding_backend) = gateway.backend_names();
    let manifest = Manifest {
        topic: cfg.topic.clone(),
        config_hash: hash,
        generated_at,
        text_backend,
        embedding_backend,
        paper_source: services.source.name(),
        stages_run,
        stages_resumed,
        papers: substrate.papers.len(),
        keynotes: substrate.keynotes.len(),
        clusters: substrate.clusters.len(),
        survey,
        citations,
        stats: gateway.stats(),
        stage_seconds,
    };
    let manifest_path = cfg.output_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(&manifest_path, text)
        .map_err(|e| CliError::io(format!("writing {}", manifest_path.display()), e))?;
    Ok(RunOutcome {
        substrate,
        manifest,
        manifest_path,
        context: ctx,
    })
}

/// Appends events not yet written by this process to the run log.
fn append_events(dir: &Path, ctx: &Context, written: &mut usize) -> Result<()> {
    let path = dir.join(EVENTS_FILE);
    let events = ctx.events.snapshot();
    if events.len() <= *written {
        return Ok(());
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    for e in &events[*written..] {
        let line = serde_json::to_string(e).expect("event serialises");
        writeln!(f, "{line}").map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    }
    *written = events.len();
    Ok(())
}
