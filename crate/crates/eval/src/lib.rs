//! Metrics for generated surveys: citation recall and precision under an
//! entailment judge, the valid-citation ratio, weighted content scores, and
//! agreement statistics used to check judge stability.

pub mod citation;
pub mod claims;
pub mod content;
pub mod error;
pub mod report;
pub mod stats;

pub use citation::{
    citation_precision, citation_recall, necessity_g, required_subsets, valid_citation_ratio, CitationTally,
    Metric, NliVerdictTable,
};
pub use claims::{extract_claims, split_sentences, ClaimRecord};
pub use content::{
    weighted_content_score, ContentScores, DimensionGroup, CORE_DIMENSIONS, DEPTH_DIMENSIONS, WRITING_DIMENSIONS,
};
pub use error::{EvalError, Result};
pub use report::{
    evaluate_survey, EvalConfig, EvalInput, EvaluationReport, GatewayJudge, GatewayNli, JudgeBackend, MetricCell,
    NliBackend, PremiseSource, REPORT_CSV, REPORT_JSON,
};
pub use stats::{
    cohens_kappa, coefficient_of_variation, dispersion, fleiss_kappa, Deviation, Dispersion, RatingMatrix,
};
