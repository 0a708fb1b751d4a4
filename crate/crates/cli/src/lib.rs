//! Library half of the `surveyor` command: configuration, the stage driver
//! with checkpoints, and the evaluate, inspect and cache commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use checkpoint::{Checkpoint, Stage};
pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use pipeline::{run, RunOptions, RunOutcome, Services};
