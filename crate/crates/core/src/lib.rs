//! Core of the survey generator: the knowledge substrate, the model gateway,
//! and the retrieval, understanding, analysis, writing and refinement stages.

pub mod analysis;
pub mod code_analysis;
pub mod context;
pub mod error;
pub mod gateway;
pub mod model;
pub mod offline;
pub mod prompts;
pub mod refinement;
pub mod retrieval;
pub mod understanding;
pub mod writing;

pub use context::{Context, Monitor};
pub use error::{Error, Result};
