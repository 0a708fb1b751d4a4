//! Entailment-based citation recall and precision, and the valid-citation
//! ratio.
//!
//! `h(c, S)` is the judge's verdict on whether the references in `S`
//! jointly support claim `c`. Precision credits a reference only when the
//! claim is supported by its full reference set and the reference is
//! necessary: it supports the claim alone, or removing it breaks support.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use surveyor_core::model::{mark_spans, PaperId};
use surveyor_core::writing::BibEntry;

use crate::claims::{body_paragraphs, bracket_regex, citation_numbers, ClaimRecord};
use crate::error::{EvalError, Result};

/// A ratio together with the reason it was defaulted, if it was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl Metric {
    fn ratio(num: usize, den: usize, empty: &str) -> Self {
        if den == 0 {
            tracing::warn!("{empty}");
            Metric {
                value: 1.0,
                warning: Some(empty.to_string()),
            }
        } else {
            Metric {
                value: num as f64 / den as f64,
                warning: None,
            }
        }
    }
}

/// Verdicts keyed by claim and reference subset.
#[derive(Debug, Clone, Default)]
pub struct NliVerdictTable {
    entries: HashMap<(usize, BTreeSet<usize>), bool>,
}

fn show(subset: &BTreeSet<usize>) -> String {
    let inner = subset.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ");
    format!("{{{inner}}}")
}

impl NliVerdictTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, claim: usize, subset: impl IntoIterator<Item = usize>, verdict: bool) {
        self.entries.insert((claim, subset.into_iter().collect()), verdict);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `h(claim, subset)`. The empty set supports nothing, so it needs no
    /// entry.
    pub fn get(&self, claim: usize, subset: &BTreeSet<usize>) -> Result<bool> {
        if subset.is_empty() {
            return Ok(false);
        }
        self.entries
            .get(&(claim, subset.clone()))
            .copied()
            .ok_or_else(|| EvalError::MissingVerdict {
                claim,
                subset: show(subset),
            })
    }
}

/// Subsets the metrics query for one claim: the full set, each singleton
/// and each leave-one-out set, without repeats or the empty set.
pub fn required_subsets(claim: &ClaimRecord) -> Vec<BTreeSet<usize>> {
    let full: BTreeSet<usize> = claim.refs.iter().copied().collect();
    let mut out = vec![full.clone()];
    for r in &full {
        out.push(BTreeSet::from([*r]));
        let mut rest = full.clone();
        rest.remove(r);
        out.push(rest);
    }
    let mut seen = BTreeSet::new();
    out.retain(|s| !s.is_empty() && seen.insert(s.clone()));
    out
}

fn full_set(claim: &ClaimRecord) -> BTreeSet<usize> {
    claim.refs.iter().copied().collect()
}

/// Share of claims supported by their full reference set. No claims gives
/// 1.0 with a warning.
pub fn citation_recall(claims: &[ClaimRecord], verdicts: &NliVerdictTable) -> Result<Metric> {
    let mut supported = 0;
    for c in claims {
        if verdicts.get(c.claim_id, &full_set(c))? {
            supported += 1;
        }
    }
    Ok(Metric::ratio(supported, claims.len(), "no citation-bearing claims; recall defaults to 1.0"))
}

/// Whether `reference` is necessary for `claim`.
pub fn necessity_g(claim: &ClaimRecord, reference: usize, verdicts: &NliVerdictTable) -> Result<bool> {
    if verdicts.get(claim.claim_id, &BTreeSet::from([reference]))? {
        return Ok(true);
    }
    let mut rest = full_set(claim);
    rest.remove(&reference);
    Ok(!verdicts.get(claim.claim_id, &rest)?)
}

/// Share of claim-reference pairs whose claim is supported and whose
/// reference is necessary. No references gives 1.0 with a warning.
pub fn citation_precision(claims: &[ClaimRecord], verdicts: &NliVerdictTable) -> Result<Metric> {
    let mut credited = 0;
    let mut total = 0;
    for c in claims {
        total += c.refs.len();
        if !verdicts.get(c.claim_id, &full_set(c))? {
            continue;
        }
        for r in &c.refs {
            if necessity_g(c, *r, verdicts)? {
                credited += 1;
            }
        }
    }
    Ok(Metric::ratio(credited, total, "no cited references; precision defaults to 1.0"))
}

/// Counts behind [`valid_citation_ratio`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationTally {
    pub valid: usize,
    pub total: usize,
    pub ratio: Metric,
}

/// Share of in-text citations that parse and resolve to a bibliography
/// entry whose paper is in `universe`. Numeric lists count once per number.
/// Bracket tokens that look like citations but do not parse (`[3a]`, `[?]`)
/// and leftover unresolved `<key>` marks count as invalid. Other bracketed
/// text such as `[sic]` is ignored.
pub fn valid_citation_ratio(survey: &str, bibliography: &[BibEntry], universe: &BTreeSet<PaperId>) -> CitationTally {
    let resolves = |n: usize| {
        bibliography
            .iter()
            .any(|b| b.number == n && universe.contains(&b.paper_id))
    };
    let (mut valid, mut total) = (0, 0);
    for paragraph in body_paragraphs(survey) {
        for cap in bracket_regex().captures_iter(&paragraph) {
            let body = cap[1].trim();
            match citation_numbers(body) {
                Some(ns) => {
                    total += ns.len();
                    valid += ns.into_iter().filter(|n| resolves(*n)).count();
                }
                None if looks_like_citation(body) => total += 1,
                None => {}
            }
        }
        total += mark_spans(&paragraph).len();
    }
    CitationTally {
        valid,
        total,
        ratio: Metric::ratio(valid, total, "no citations found; valid ratio defaults to 1.0"),
    }
}

fn looks_like_citation(body: &str) -> bool {
    body.chars()
        .next()
        .is_some_and(|c| c.is_ascii_digit() || matches!(c, '?' | '@' | '#'))
}
