//! Domain types shared by every stage and the persisted knowledge substrate.

mod cluster;
mod draft;
mod error_memory;
mod events;
mod ids;
mod keynote;
mod outline;
mod paper;
mod substrate;

pub use cluster::{
    Attribution, Cluster, ClusterAnalysis, ComparisonRow, ComparisonTable, QaItem, Relation,
    RelationEdge,
};
pub use draft::{
    extract_mark_keys, mark_spans, CitationMark, CitationStyle, DraftUnit, Granularity,
};
pub use error_memory::{ErrorMemory, ERROR_MEMORY_CAPACITY};
pub use events::{EventKind, EventLog, LogEvent};
pub use ids::{stable_hash, unify_paper_id, IdSource, PaperId};
pub use keynote::{Keynote, Provenance, MANDATORY_FIELDS};
pub use outline::{NodePath, OutlineNode, MAX_OUTLINE_DEPTH};
pub use paper::PaperRecord;
pub use substrate::{CodeOverview, CodeReport, KnowledgeSubstrate};
pub(crate) use substrate::{read_json, write_json};
