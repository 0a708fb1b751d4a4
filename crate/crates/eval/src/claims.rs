//! Sentence-level claim extraction from an assembled survey.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// One citation-bearing sentence. `refs` holds bibliography numbers in
/// order of first appearance, without repeats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: usize,
    pub text: String,
    pub refs: Vec<usize>,
}

const ABBREVIATIONS: &[&str] = &["e.g", "i.e", "al", "vs", "etc", "cf", "fig", "eq", "resp", "approx", "no"];

pub(crate) fn bracket_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]\n]{1,40})\]").expect("static regex"))
}

/// Numbers in a bracket body such as `3`, `1, 4` or `2-5`. `None` when the
/// body is not a numeric citation list.
pub(crate) fn citation_numbers(body: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for part in body.split([',', ';']) {
        let part = part.trim();
        if let Some((a, b)) = part.split_once(['-', '\u{2013}']) {
            let (a, b) = (a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?);
            if a > b || b - a > 50 {
                return None;
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().ok()?);
        }
    }
    Some(out)
}

/// The prose of a survey: front matter, headings and everything from the
/// references heading on are dropped. Paragraphs come back one per line.
pub(crate) fn body_paragraphs(survey: &str) -> Vec<String> {
    let mut text = survey;
    if let Some(rest) = text.strip_prefix("---\n") {
        if let Some(end) = rest.find("\n---") {
            text = &rest[end + 4..];
        }
    }
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with('#') {
            if t.trim_start_matches('#').trim().eq_ignore_ascii_case("references") {
                break;
            }
            flush(&mut current, &mut paragraphs);
        } else if t.is_empty() {
            flush(&mut current, &mut paragraphs);
        } else {
            current.push(t);
        }
    }
    flush(&mut current, &mut paragraphs);
    paragraphs
}

fn flush(current: &mut Vec<&str>, out: &mut Vec<String>) {
    if !current.is_empty() {
        out.push(current.join(" "));
        current.clear();
    }
}

fn ends_with_abbreviation(before: &str) -> bool {
    let word = before.rsplit(char::is_whitespace).next().unwrap_or("");
    let word = word.trim_start_matches(['(', '"']);
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
        || (word.chars().count() == 1 && word.chars().all(|c| c.is_uppercase()))
}

/// Splits a paragraph into sentences. A sentence ends at `.`, `!` or `?`
/// followed by whitespace, except after common abbreviations and initials.
/// Citation brackets that open a sentence are moved to the one before, so
/// `... results. [3] Next` keeps `[3]` with its claim.
pub fn split_sentences(paragraph: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = paragraph.char_indices().collect();
    let mut out: Vec<String> = Vec::new();
    let mut start = 0;
    for (i, &(pos, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let next_is_space = chars.get(i + 1).is_none_or(|&(_, n)| n.is_whitespace());
        if !next_is_space || (c == '.' && ends_with_abbreviation(&paragraph[start..pos])) {
            continue;
        }
        let end = pos + c.len_utf8();
        push_sentence(&mut out, &paragraph[start..end]);
        start = end;
    }
    push_sentence(&mut out, &paragraph[start..]);
    out
}

fn push_sentence(out: &mut Vec<String>, raw: &str) {
    let mut s = raw.trim();
    if let Some(prev) = out.last_mut() {
        let mut leading = String::new();
        while let Some(m) = bracket_regex().find(s).filter(|m| m.start() == 0) {
            if citation_numbers(&s[1..m.end() - 1]).is_none() {
                break;
            }
            leading.push(' ');
            leading.push_str(m.as_str());
            s = s[m.end()..].trim_start();
        }
        prev.push_str(&leading);
    }
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Claims of a survey. A sentence becomes a claim when at least one of its
/// numeric citations names an entry of `known_refs`; unresolved numbers are
/// left out of `refs`. The claim text has its citation brackets removed.
pub fn extract_claims(survey: &str, known_refs: &BTreeSet<usize>) -> Vec<ClaimRecord> {
    let mut claims = Vec::new();
    for paragraph in body_paragraphs(survey) {
        for sentence in split_sentences(&paragraph) {
            let mut refs = Vec::new();
            for cap in bracket_regex().captures_iter(&sentence) {
                for n in citation_numbers(&cap[1]).unwrap_or_default() {
                    if known_refs.contains(&n) && !refs.contains(&n) {
                        refs.push(n);
                    }
                }
            }
            if refs.is_empty() {
                continue;
            }
            let stripped = bracket_regex().replace_all(&sentence, |c: &regex::Captures| {
                if citation_numbers(&c[1]).is_some() {
                    String::new()
                } else {
                    c[0].to_string()
                }
            });
            let text = stripped
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .replace(" .", ".")
                .replace(" ,", ",");
            claims.push(ClaimRecord {
                claim_id: claims.len(),
                text,
                refs,
            });
        }
    }
    claims
}
