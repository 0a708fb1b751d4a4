//! Topic-level code and environment reports.

use std::collections::BTreeSet;

use serde_json::json;

use super::repo::RepoSnapshot;
use super::{CodeAnalysisConfig, STAGE};
use crate::context::{Context, Monitor};
use crate::error::{Error, Result};
use crate::gateway::{estimate_tokens, parallel_map, CallSpec};
use crate::model::{mark_spans, ErrorMemory, PaperId};
use crate::prompts::{self, tags, Prompt};

/// Placeholder for repositories without manifests or readmes.
pub const NO_CONFIG: &str = "no configuration found";
/// Tokens kept free for instructions and the reply when checking whether
/// batch reports fit into one integration call.
const INTEGRATION_SLACK: usize = 2048;

/// Removes `<key>` marks that do not name one of `allowed`, flagging each.
fn police_marks(text: &str, allowed: &BTreeSet<PaperId>, monitor: &mut Monitor<'_>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (range, key) in mark_spans(text) {
        if PaperId::parse(&key).is_ok_and(|id| allowed.contains(&id)) {
            continue;
        }
        monitor.flag(&key, "attribution does not name an analysed repository");
        out.push_str(text[last..range.start].trim_end_matches(' '));
        last = range.end;
    }
    out.push_str(&text[last..]);
    out
}

fn listing(items: &[(PaperId, String)]) -> String {
    items
        .iter()
        .map(|(id, code)| format!("### <{id}>\n{code}\n"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reports on pseudocode in batches of `cfg.batch_size`, then integrates the
/// batch reports. When they do not fit in one call they are merged pairwise,
/// round by round, first.
pub fn batch_code_report(
    ctx: &Context,
    pseudocodes: &[(PaperId, String)],
    topic: &str,
    cfg: &CodeAnalysisConfig,
) -> Result<String> {
    if pseudocodes.is_empty() {
        return Err(Error::Precondition("no pseudocode to report on".into()));
    }
    let allowed: BTreeSet<PaperId> = pseudocodes.iter().map(|(id, _)| id.clone()).collect();
    let batches: Vec<&[(PaperId, String)]> = pseudocodes.chunks(cfg.batch_size.max(1)).collect();
    let reports: Vec<String> = parallel_map(ctx.workers, &batches, |batch| {
        let ids: Vec<&str> = batch.iter().map(|(id, _)| id.as_str()).collect();
        let prompt = Prompt::new(
            tags::CODE_BATCH_REPORT,
            prompts::CODE_BATCH_REPORT,
            json!({ "topic": topic, "paper_ids": ids }),
        )
        .with_evidence(listing(batch));
        ctx.ask_text(
            &prompt,
            &CallSpec::new(tags::CODE_BATCH_REPORT, cfg.reviewer_temperature).max_retries(cfg.retries),
            &mut ErrorMemory::new(),
        )
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut monitor = Monitor::new(&ctx.events, STAGE, "code report");
    let mut reports: Vec<String> = reports
        .iter()
        .map(|r| police_marks(r, &allowed, &mut monitor))
        .collect();

    let room = ctx.budget().saturating_sub(INTEGRATION_SLACK + estimate_tokens(prompts::CODE_INTEGRATE));
    let joined = |rs: &[String]| rs.join("\n\n---\n\n");
    let mut merge_round = 0;
    while reports.len() > 1 && estimate_tokens(&joined(&reports)) > room {
        merge_round += 1;
        tracing::debug!(merge_round, parts = reports.len(), "pairwise merge of code reports");
        let pairs: Vec<(usize, &[String])> = reports.chunks(2).enumerate().collect();
        reports = parallel_map(ctx.workers, &pairs, |&(part, pair)| {
            if pair.len() == 1 {
                return Ok(pair[0].clone());
            }
            let prompt = Prompt::new(
                tags::CODE_MERGE,
                prompts::CODE_MERGE,
                json!({ "topic": topic, "merge_round": merge_round, "part": part + 1 }),
            )
            .with_evidence(joined(pair));
            ctx.ask_text(
                &prompt,
                &CallSpec::new(tags::CODE_MERGE, cfg.reviewer_temperature).max_retries(cfg.retries),
                &mut ErrorMemory::new(),
            )
        })
        .into_iter()
        .collect::<Result<_>>()?;
    }
    let prompt = Prompt::new(
        tags::CODE_INTEGRATE,
        prompts::CODE_INTEGRATE,
        json!({ "topic": topic, "paper_ids": allowed.iter().map(PaperId::as_str).collect::<Vec<_>>() }),
    )
    .with_evidence(joined(&reports));
    let text = ctx.ask_text(
        &prompt,
        &CallSpec::new(tags::CODE_INTEGRATE, cfg.reviewer_temperature).max_retries(cfg.retries),
        &mut ErrorMemory::new(),
    )?;
    Ok(police_marks(&text, &allowed, &mut monitor))
}

fn clip(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((i, _)) => format!("{}\n[truncated]", &text[..i]),
        None => text.to_string(),
    }
}

/// Per-repository configuration digest used in the environment prompt.
pub fn config_entry(repo: &RepoSnapshot, max_chars: usize) -> serde_json::Value {
    if repo.config_files.is_empty() {
        return json!({ "paper_id": repo.paper_id.as_str(), "config_files": NO_CONFIG });
    }
    let files: Vec<_> = repo
        .config_files
        .iter()
        .map(|p| json!({ "path": p, "content": clip(&repo.files[p], max_chars) }))
        .collect();
    json!({ "paper_id": repo.paper_id.as_str(), "config_files": files })
}

/// Environment report built from configuration files only.
pub fn environment_report(ctx: &Context, repos: &[RepoSnapshot], cfg: &CodeAnalysisConfig) -> Result<String> {
    let entries: Vec<_> = repos.iter().map(|r| config_entry(r, cfg.config_file_chars)).collect();
    let prompt = Prompt::new(
        tags::ENVIRONMENT_REPORT,
        prompts::ENVIRONMENT_REPORT,
        json!({ "repositories": entries }),
    );
    ctx.ask_text(
        &prompt,
        &CallSpec::new(tags::ENVIRONMENT_REPORT, cfg.reviewer_temperature).max_retries(cfg.retries),
        &mut ErrorMemory::new(),
    )
}
