//! Survey writing: outline, citation assignment, bottom-up drafting under
//! per-node evidence, and assembly into one document with a bibliography.

mod assembly;
mod citations;
mod drafting;
mod outline;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use assembly::{assemble_survey, AssembledSurvey, BibEntry, SurveyMeta, CITATIONS_FILE, SURVEY_FILE};
pub use citations::{assign_citations, normalize_title, verify_citations, CitationResolver, CitationVerdict};
pub use drafting::{count_words, draft_all, draft_section, draft_subsection, unit_granularity};
pub use outline::{draft_outline, parse_outline};

use crate::analysis::briefs_of;
use crate::context::Context;
use crate::error::{Error, Result};
use crate::model::{
    CitationStyle, Cluster, ClusterAnalysis, CodeOverview, Keynote, KnowledgeSubstrate, PaperId, PaperRecord,
};

pub(crate) const STAGE: &str = "writing";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WritingConfig {
    pub outline_temperature: f64,
    pub subsection_temperature: f64,
    pub section_temperature: f64,
    pub subsection_least_citations: usize,
    pub subsection_least_words: usize,
    pub section_least_citations: usize,
    pub section_least_words: usize,
    pub citation_style: CitationStyle,
    /// Regenerations after a unit fails verification.
    pub max_citation_retries: u32,
    /// Keynotes per outline refinement call and papers per assignment call.
    pub keynote_batch_size: usize,
    /// Retries for outline and assignment replies.
    pub retries: u32,
    /// Papers given to a leaf that received none.
    pub fallback_top_k: usize,
}

impl Default for WritingConfig {
    fn default() -> Self {
        Self {
            outline_temperature: 0.5,
            subsection_temperature: 0.7,
            section_temperature: 0.3,
            subsection_least_citations: 3,
            subsection_least_words: 250,
            section_least_citations: 3,
            section_least_words: 150,
            citation_style: CitationStyle::TitleMark,
            max_citation_retries: 3,
            keynote_batch_size: 20,
            retries: 3,
            fallback_top_k: 3,
        }
    }
}

impl WritingConfig {
    pub fn validate(&self) -> Result<()> {
        let floors = [
            self.subsection_least_citations,
            self.subsection_least_words,
            self.section_least_citations,
            self.section_least_words,
        ];
        if floors.contains(&0) {
            return Err(Error::Config("writing citation and word floors must be positive".into()));
        }
        if self.keynote_batch_size == 0 || self.fallback_top_k == 0 {
            return Err(Error::Config(
                "writing.keynote_batch_size and fallback_top_k must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Read-only view of the substrate parts the writer draws on.
#[derive(Debug, Clone, Copy)]
pub struct WritingInputs<'a> {
    pub topic: &'a str,
    pub papers: &'a BTreeMap<PaperId, PaperRecord>,
    pub keynotes: &'a BTreeMap<PaperId, Keynote>,
    pub clusters: &'a [Cluster],
    pub analyses: &'a [ClusterAnalysis],
    pub inter_cluster: &'a str,
    pub code_overview: Option<&'a CodeOverview>,
}

impl<'a> WritingInputs<'a> {
    pub fn of(s: &'a KnowledgeSubstrate) -> Self {
        Self {
            topic: &s.topic,
            papers: &s.papers,
            keynotes: &s.keynotes,
            clusters: &s.clusters,
            analyses: &s.analyses,
            inter_cluster: &s.inter_cluster,
            code_overview: s.code_overview.as_ref(),
        }
    }

    pub fn resolver(&self) -> CitationResolver {
        CitationResolver::new(self.papers.values().map(|p| (&p.id, p.title.as_str())))
    }

    /// Keynote rendering of one paper, or its abstract when no keynote exists.
    pub fn digest(&self, id: &PaperId) -> String {
        let title = self.papers.get(id).map(|p| p.title.as_str()).unwrap_or("");
        match self.keynotes.get(id) {
            Some(k) => k.render(title),
            None => {
                let abs = self.papers.get(id).map(|p| p.abstract_text.as_str()).unwrap_or("");
                format!("Paper {id} ({title})\nabstract: {abs}\n")
            }
        }
    }
}

/// Outline, citation assignment and all drafts, stored in the substrate.
pub fn run_writing(ctx: &Context, s: &mut KnowledgeSubstrate, cfg: &WritingConfig) -> Result<()> {
    cfg.validate()?;
    let inputs = WritingInputs::of(s);
    let mut outline = draft_outline(ctx, &inputs, cfg)?;
    let briefs = briefs_of(s);
    assign_citations(ctx, &mut outline, &briefs, cfg)?;
    let drafts = draft_all(ctx, &inputs, &outline, &inputs.resolver(), cfg)?;
    s.outline = Some(outline);
    s.drafts = drafts;
    Ok(())
}
