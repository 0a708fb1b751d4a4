//! Stage checkpoints. A checkpoint records which stages finished against
//! which configuration, so an interrupted run can pick up where it stopped.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieval,
    Understanding,
    Analysis,
    CodeAnalysis,
    Writing,
    Refinement,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Retrieval,
        Stage::Understanding,
        Stage::Analysis,
        Stage::CodeAnalysis,
        Stage::Writing,
        Stage::Refinement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Retrieval => "retrieval",
            Stage::Understanding => "understanding",
            Stage::Analysis => "analysis",
            Stage::CodeAnalysis => "code_analysis",
            Stage::Writing => "writing",
            Stage::Refinement => "refinement",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub completed_stages: Vec<Stage>,
    pub substrate_dir: PathBuf,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(substrate_dir: impl Into<PathBuf>, config_hash: impl Into<String>) -> Self {
        Self {
            completed_stages: Vec::new(),
            substrate_dir: substrate_dir.into(),
            config_hash: config_hash.into(),
        }
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.completed_stages.contains(&stage)
    }

    /// Records a finished stage. Stages only ever complete in pipeline order.
    pub fn complete(&mut self, stage: Stage) {
        debug_assert!(self.completed_stages.last().is_none_or(|l| *l < stage));
        if !self.is_done(stage) {
            self.completed_stages.push(stage);
        }
    }

    pub fn load(path: &Path) -> Result<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| CliError::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("unreadable: {e}"),
        })
    }

    /// Writes through a temporary file so a crash never leaves half a checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        }
        let tmp = path.with_extension("tmp");
        let text = serde_json::to_string_pretty(self).expect("checkpoint serialises");
        std::fs::write(&tmp, text).map_err(|e| CliError::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    /// Refuses to continue a run that was started with another configuration.
    pub fn ensure_matches(&self, path: &Path, config_hash: &str) -> Result<()> {
        if self.config_hash == config_hash {
            return Ok(());
        }
        Err(CliError::Checkpoint {
            path: path.to_path_buf(),
            reason: format!(
                "configuration changed since the checkpoint was written (checkpoint {}, current {}); \
                 start a fresh run without --resume",
                short(&self.config_hash),
                short(config_hash)
            ),
        })
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
