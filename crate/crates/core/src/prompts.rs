//! Prompt assembly shared by every stage.
//!
//! A prompt has three parts: fixed instructions, a JSON payload carrying the
//! structured inputs, and free-text evidence. Instructions and payload form
//! the incompressible core; evidence is shortened first when the prompt
//! would not fit the context window. The payload always sits in a fenced
//! block opened with `` ```json input `` so offline backends can read it.

use serde_json::Value;

use crate::error::Result;
use crate::gateway::{compress_context, Compressed};
use crate::model::ErrorMemory;

/// Opening fence of the payload block.
pub const PAYLOAD_FENCE: &str = "```json input\n";
/// Line that introduces the evidence block.
pub const EVIDENCE_HEADER: &str = "\nEvidence:\n";

/// Call tags. They label requests in logs and partition the response cache.
pub mod tags {
    pub const SEED_KEYWORDS: &str = "seed_keywords";
    pub const SEED_JUDGE: &str = "seed_judge";
    pub const RERANK: &str = "rerank";
    pub const KEYNOTE: &str = "keynote";
    pub const KEYNOTE_CHUNK: &str = "keynote_chunk";
    pub const KEYNOTE_MERGE: &str = "keynote_merge";
    pub const CLUSTER_DESIGN: &str = "cluster_design";
    pub const CLUSTER_ASSIGN: &str = "cluster_assign";
    pub const RELATION_GRAPH: &str = "relation_graph";
    pub const COMPARISON_TABLE: &str = "comparison_table";
    pub const GUIDED_QA: &str = "guided_qa";
    pub const INTER_CLUSTER: &str = "inter_cluster";
    pub const CODE_PLANNER: &str = "code_planner";
    pub const CODE_CREATE: &str = "code_create";
    pub const CODE_REVIEW: &str = "code_review";
    pub const CODE_REVISE: &str = "code_revise";
    pub const CODE_BATCH_REPORT: &str = "code_batch_report";
    pub const CODE_INTEGRATE: &str = "code_integrate";
    pub const CODE_MERGE: &str = "code_merge";
    pub const ENVIRONMENT_REPORT: &str = "environment_report";
    pub const OUTLINE_DRAFT: &str = "outline_draft";
    pub const OUTLINE_REFINE: &str = "outline_refine";
    pub const CITATION_ASSIGN: &str = "citation_assign";
    pub const DRAFT_SUBSECTION: &str = "draft_subsection";
    pub const DRAFT_SECTION: &str = "draft_section";
    pub const REFINE_PLANNER: &str = "refine_planner";
    pub const REFINE_REVIEW: &str = "refine_review";
    pub const REFINE_REVISE: &str = "refine_revise";
    pub const NLI: &str = "nli";
    pub const JUDGE_SCORE: &str = "judge_score";
}

#[derive(Debug, Clone)]
pub struct Prompt {
    pub tag: &'static str,
    pub instructions: &'static str,
    pub payload: Value,
    pub evidence: String,
}

impl Prompt {
    pub fn new(tag: &'static str, instructions: &'static str, payload: Value) -> Self {
        Self {
            tag,
            instructions,
            payload,
            evidence: String::new(),
        }
    }

    pub fn with_evidence(mut self, evidence: impl Into<String>) -> Self {
        self.evidence = evidence.into();
        self
    }

    /// Renders the prompt with the error-memory preamble, shrinking evidence
    /// to fit `budget` estimated tokens.
    pub fn render(&self, memory: &ErrorMemory, budget: usize) -> Result<Compressed> {
        let payload = serde_json::to_string_pretty(&self.payload).expect("payload serializes");
        let core = format!(
            "{}\n\n{}Input:\n{PAYLOAD_FENCE}{payload}\n```\n",
            self.instructions,
            memory.render()
        );
        let aux = if self.evidence.is_empty() {
            String::new()
        } else {
            format!("{EVIDENCE_HEADER}{}", self.evidence)
        };
        compress_context(&core, &aux, budget)
    }
}

/// Reads the payload back out of a rendered prompt.
pub fn payload_of(prompt: &str) -> Option<Value> {
    let start = prompt.find(PAYLOAD_FENCE)? + PAYLOAD_FENCE.len();
    let end = prompt[start..].find("\n```")? + start;
    serde_json::from_str(&prompt[start..end]).ok()
}

/// Evidence text of a rendered prompt, possibly truncated.
pub fn evidence_of(prompt: &str) -> &str {
    prompt
        .find(EVIDENCE_HEADER)
        .map(|i| &prompt[i + EVIDENCE_HEADER.len()..])
        .unwrap_or("")
}

pub const SEED_KEYWORDS: &str = "\
You help build a literature search. Given a research topic, propose up to three \
alternative search queries that a scholar would type to find core papers on it. \
Reply with JSON only: {\"queries\": [\"...\"]}.";

pub const SEED_JUDGE: &str = "\
Decide for each candidate paper whether it is on-topic for the research topic. \
Judge from the title and abstract; keep papers that a survey of the topic would \
need to discuss. Give one verdict per paper, using the exact paper_id you were \
given. Reply with JSON only: {\"verdicts\": [{\"paper_id\": \"...\", \"relevant\": true, \
\"note\": \"short reason\"}]}.";

pub const RERANK: &str = "\
You are screening papers for a survey after a broad similarity search. Remove \
papers that only touch the topic in passing; keep those whose main contribution \
belongs in the survey. Give one verdict per paper with the exact paper_id and a \
one-line relevance note. Reply with JSON only: {\"verdicts\": [{\"paper_id\": \"...\", \
\"relevant\": true, \"note\": \"...\"}]}.";

pub const KEYNOTE: &str = "\
Read the full text of the paper in the evidence block and write a structured \
digest. Fill every one of these fields with specific, concrete prose: \
contributions, methodology, experiments, limitations, critical_reflections, tldr \
(one or two sentences). You may add further fields such as assumptions or datasets. \
Reply with one JSON object whose values are strings.";

pub const KEYNOTE_CHUNK: &str = "\
The evidence block holds one part of a longer paper. Write notes on this part \
only, as a JSON object using any of the fields contributions, methodology, \
experiments, limitations, critical_reflections, tldr. Leave out fields this part \
says nothing about.";

pub const KEYNOTE_MERGE: &str = "\
The evidence block holds notes taken on consecutive parts of one paper. Merge \
them into a single digest with every field filled: contributions, methodology, \
experiments, limitations, critical_reflections, tldr. Remove repetition and keep \
specifics. Reply with one JSON object whose values are strings.";

pub const CLUSTER_DESIGN: &str = "\
Design the thematic groups of a survey. You receive the current list of groups \
(possibly empty) and a batch of paper digests. Return the full updated list: keep \
groups that still fit, merge or split groups, and add groups for themes the batch \
introduces. Group names must be distinct and each needs a one-paragraph summary. \
Reply with JSON only: {\"clusters\": [{\"name\": \"...\", \"summary\": \"...\"}]}.";

pub const CLUSTER_ASSIGN: &str = "\
Place each paper into every thematic group it belongs to; a paper may belong to \
several groups. Use only the listed cluster_id values and the exact paper_id \
strings. Reply with JSON only: {\"assignments\": [{\"paper_id\": \"...\", \
\"cluster_ids\": [1]}]}.";

pub const RELATION_GRAPH: &str = "\
Map how the papers of this group build on one another. For each meaningful pair \
give a directed edge from the earlier or more basic work to the later one, typed \
as foundation, extension or substitution, with a one-sentence description. Only \
use the listed paper ids. Reply with JSON only: {\"edges\": [{\"source\": \"...\", \
\"target\": \"...\", \"relation\": \"extension\", \"description\": \"...\"}]}.";

pub const COMPARISON_TABLE: &str = "\
Build a comparison table for the papers of this group. Choose at least three \
dimensions that separate the papers well, then give one row per listed paper \
with a short cell for every dimension. Reply with JSON only: {\"columns\": \
[\"...\"], \"rows\": [{\"paper_id\": \"...\", \"cells\": {\"<column>\": \"...\"}}]}.";

pub const GUIDED_QA: &str = "\
Pose questions that can only be answered by reading several papers of this group \
together, and answer them. Each item lists the related paper ids (at least two) \
and cites papers in the answer as <paper_id>. Cite only papers of this group. \
Reply with JSON only: {\"items\": [{\"question\": \"...\", \"related\": [\"...\"], \
\"answer\": \"...\"}]}.";

pub const INTER_CLUSTER: &str = "\
Compare the thematic groups of the survey with each other: where they agree, \
where they diverge, and which open problems sit between them. Cite papers as \
<paper_id> using only ids that appear in the input. Reply in plain prose.";

pub const CODE_PLANNER: &str = "\
You direct the analysis of a code repository that accompanies a paper, with the \
goal of writing repository-level pseudocode. Available operations: \
get_source_code (with a repository-relative path), create, revise, review, finish. \
Read at least three important source files before create. After pseudocode \
exists, revise it at least once in every three steps. Choose the next one to \
three steps. Reply with JSON only: {\"plan\": [{\"op\": \"get_source_code\", \
\"path\": \"...\", \"rationale\": \"...\"}]}.";

pub const CODE_CREATE: &str = "\
Write pseudocode for the repository from the source files in the evidence block. \
Show the main components, their data flow and the key algorithmic steps. Reply \
with the pseudocode only.";

pub const CODE_REVIEW: &str = "\
Review the pseudocode in the evidence block. Score conciseness, \
logical_structure and implementation_specificity from 0 to 10 and list concrete \
suggestions. Reply with JSON only: {\"conciseness\": 0, \"logical_structure\": 0, \
\"implementation_specificity\": 0, \"suggestions\": [\"...\"]}.";

pub const CODE_REVISE: &str = "\
Improve the pseudocode in the evidence block following the review suggestions in \
the input. Reply with the full revised pseudocode only.";

pub const CODE_BATCH_REPORT: &str = "\
Summarize the implementation approaches in the pseudocode listings of the \
evidence block for a survey on the topic. Compare architectures, algorithms and \
engineering choices. Attribute every statement to its listing as <paper_id>.";

pub const CODE_INTEGRATE: &str = "\
Combine the partial implementation reports in the evidence block into one report \
for the survey topic, organized by recurring design patterns. Keep the <paper_id> \
attributions.";

pub const CODE_MERGE: &str = "\
Merge the two implementation reports in the evidence block into one, removing \
duplication and keeping every <paper_id> attribution.";

pub const ENVIRONMENT_REPORT: &str = "\
From the configuration files in the evidence block, describe the software \
environments these repositories use: frameworks, dependency versions and \
deployment patterns. Organize the report under headed sections and include a \
table of frameworks by repository.";

pub const OUTLINE_DRAFT: &str = "\
Draft the outline of a survey on the topic from its thematic groups and their \
analyses. Use sections with optional subsections, no deeper. Every node needs a \
title and a description of what it will cover. Include a conclusion section and a \
node on future work. Reply with JSON only: {\"sections\": [{\"title\": \"...\", \
\"description\": \"...\", \"subsections\": [{\"title\": \"...\", \"description\": \"...\"}]}]}.";

pub const OUTLINE_REFINE: &str = "\
Revise the survey outline in the input so that it accommodates the paper digests \
in the evidence block: add, rename or reorganize nodes where these papers do not \
fit. Keep a conclusion section and a future-work node, and keep depth at most two. \
Reply with the complete outline as JSON only, in the same shape as the input.";

pub const CITATION_ASSIGN: &str = "\
Assign each paper to the outline nodes where it should be cited. Refer to nodes \
by their title exactly as written in the input, character for character. Every \
paper needs at least one node. Reply with JSON only: {\"assignments\": \
[{\"paper_id\": \"...\", \"sections\": [\"<node title>\"]}]}.";

pub const DRAFT_SUBSECTION: &str = "\
Write the body of one survey subsection. Synthesize the assigned papers rather \
than summarizing them one by one. Cite a paper by writing its citation key inside \
angle brackets, for example <Key>, using only keys from allowed_keys. Meet the \
minimum number of distinct citations and the minimum length given in the input. \
Write plain paragraphs with no headings and no '#' characters.";

pub const DRAFT_SECTION: &str = "\
Write the opening passage of a survey section. It should orient the reader and \
explain how the subsections relate, without repeating their content. Cite with \
<Key> using only keys from allowed_keys and meet the citation and length minimums \
in the input. Write plain paragraphs with no headings and no '#' characters.";

pub const REFINE_PLANNER: &str = "\
You coordinate the revision of part of a survey. Look at the text, the outline \
and the revision history, then choose the next steps from: read_keynotes (with \
paper_ids), review, revise (with instructions), finish. Choose finish once the \
text is in good shape. Reply with JSON only: {\"plan\": [{\"skill\": \"review\", \
\"paper_ids\": [], \"instructions\": \"\"}]}.";

pub const REFINE_REVIEW: &str = "\
Review the survey text in the input. Score coherence, coverage, depth and \
citation_use from 0 to 10 and list concrete suggestions. Set satisfactory to true \
when no further revision is needed. Reply with JSON only: {\"scores\": \
{\"coherence\": 0}, \"suggestions\": [\"...\"], \"satisfactory\": false}.";

pub const REFINE_REVISE: &str = "\
Revise the survey text in the input following the instructions and review \
suggestions. Keep every heading line exactly as it is and in the same order, keep \
citation keys in angle brackets, cite only keys from allowed_keys, and do not add \
'#' characters inside paragraphs. Reply with the full revised text only.";

pub const NLI: &str = "\
Decide whether the premises, taken together, support the claim. Reply with JSON \
only: {\"entailed\": true}.";

pub const JUDGE_SCORE: &str = "\
Score the survey in the evidence block on each listed dimension from 1 to 10. \
Give scores only, with no explanation. Reply with JSON only: {\"scores\": \
{\"<dimension>\": 0}}.";

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn payload_round_trips_through_render() {
        let p = Prompt::new(tags::NLI, NLI, json!({"claim": "x", "premises": ["y"]}))
            .with_evidence("some evidence");
        let c = p.render(&ErrorMemory::new(), 10_000).unwrap();
        assert_eq!(payload_of(&c.text).unwrap()["claim"], "x");
        assert_eq!(evidence_of(&c.text), "some evidence");
    }

    #[test]
    fn evidence_is_shrunk_not_payload() {
        let p = Prompt::new(tags::NLI, NLI, json!({"claim": "keep me"}))
            .with_evidence("e".repeat(4000));
        let full = p.render(&ErrorMemory::new(), 100_000).unwrap();
        let budget = crate::gateway::estimate_tokens(&full.text) / 2;
        let c = p.render(&ErrorMemory::new(), budget).unwrap();
        assert!(c.was_compressed());
        assert_eq!(payload_of(&c.text).unwrap()["claim"], "keep me");
    }
}
