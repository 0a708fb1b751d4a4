//! Per-cluster artifacts and the cross-cluster synthesis.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::json;

use super::{AnalysisConfig, STAGE};
use crate::context::{Context, Monitor};
use crate::error::{Error, Result};
use crate::gateway::{parse_json, CallSpec};
use crate::model::{
    extract_mark_keys, mark_spans, Attribution, Cluster, ClusterAnalysis, ComparisonRow,
    ComparisonTable, ErrorMemory, EventKind, Keynote, PaperId, PaperRecord, QaItem, Relation,
    RelationEdge,
};
use crate::prompts::{self, tags, Prompt};

/// Minimum number of comparison dimensions.
pub const MIN_COLUMNS: usize = 3;

/// Read-only view of what the per-cluster agents may consult.
#[derive(Debug, Clone, Copy)]
pub struct Evidence<'a> {
    pub papers: &'a BTreeMap<PaperId, PaperRecord>,
    pub keynotes: &'a BTreeMap<PaperId, Keynote>,
}

impl Evidence<'_> {
    fn render(&self, members: &BTreeSet<PaperId>) -> String {
        members
            .iter()
            .map(|id| {
                let title = self.papers.get(id).map(|p| p.title.as_str()).unwrap_or("");
                match self.keynotes.get(id) {
                    Some(k) => format!("[{id}]\n{}", k.render(title)),
                    None => format!("[{id}] {title}\n"),
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn members_json(&self, members: &BTreeSet<PaperId>) -> Vec<serde_json::Value> {
        members
            .iter()
            .map(|id| {
                let title = self.papers.get(id).map(|p| p.title.as_str()).unwrap_or("");
                json!({ "paper_id": id.as_str(), "title": title })
            })
            .collect()
    }
}

fn cluster_payload(cluster: &Cluster, ev: &Evidence<'_>) -> serde_json::Value {
    json!({
        "cluster": { "name": cluster.name, "summary": cluster.summary },
        "papers": ev.members_json(&cluster.members),
    })
}

fn artifact(cluster: &Cluster, what: &str) -> String {
    format!("cluster {} {what}", cluster.cluster_id)
}

#[derive(Deserialize)]
struct EdgeReply {
    edges: Vec<RawEdge>,
}

#[derive(Deserialize)]
struct RawEdge {
    source: String,
    target: String,
    relation: String,
    #[serde(default)]
    description: String,
}

pub fn build_relation_graph(
    ctx: &Context,
    cluster: &Cluster,
    ev: &Evidence<'_>,
    cfg: &AnalysisConfig,
) -> Result<Vec<RelationEdge>> {
    if cluster.members.is_empty() {
        return Err(Error::Precondition(format!(
            "cluster {} has no members",
            cluster.cluster_id
        )));
    }
    if cluster.members.len() < 2 {
        return Ok(Vec::new());
    }
    let prompt = Prompt::new(
        tags::RELATION_GRAPH,
        prompts::RELATION_GRAPH,
        cluster_payload(cluster, ev),
    )
    .with_evidence(ev.render(&cluster.members));
    let raw = ctx.ask(
        &prompt,
        &CallSpec::new(tags::RELATION_GRAPH, cfg.temperature)
            .max_retries(cfg.retries)
            .subject(format!("cluster {}", cluster.cluster_id)),
        &mut ErrorMemory::new(),
        |raw| {
            let r: EdgeReply = parse_json(raw)?;
            if let Some(e) = r.edges.iter().find(|e| e.description.trim().is_empty()) {
                return Err(format!(
                    "edge {} -> {} has no description",
                    e.source, e.target
                ));
            }
            Ok(r.edges)
        },
    )?;
    let mut monitor = Monitor::new(&ctx.events, STAGE, artifact(cluster, "relation graph"));
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for e in raw {
        let (Ok(from), Ok(to)) = (PaperId::parse(&e.source), PaperId::parse(&e.target)) else {
            continue;
        };
        let mut ok = true;
        for end in [&from, &to] {
            if !cluster.members.contains(end) {
                monitor.flag(end.as_str(), "edge endpoint is not a cluster member");
                ok = false;
            }
        }
        if !ok || from == to {
            continue;
        }
        let relation = Relation::parse(&e.relation);
        if seen.insert((from.clone(), to.clone(), relation.to_string())) {
            edges.push(RelationEdge {
                from,
                to,
                relation,
                description: e.description.trim().to_string(),
            });
        }
    }
    Ok(edges)
}

#[derive(Deserialize)]
struct TableReply {
    columns: Vec<String>,
    rows: Vec<RawRow>,
}

#[derive(Deserialize)]
struct RawRow {
    paper_id: String,
    #[serde(default)]
    cells: BTreeMap<String, serde_json::Value>,
}

fn cell_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.trim().to_string(),
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    }
}

pub fn build_comparison_table(
    ctx: &Context,
    cluster: &Cluster,
    ev: &Evidence<'_>,
    cfg: &AnalysisConfig,
) -> Result<ComparisonTable> {
    if cluster.members.len() < 2 {
        return Err(Error::Precondition(format!(
            "comparison needs at least 2 members, cluster {} has {}",
            cluster.cluster_id,
            cluster.members.len()
        )));
    }
    let prompt = Prompt::new(
        tags::COMPARISON_TABLE,
        prompts::COMPARISON_TABLE,
        cluster_payload(cluster, ev),
    )
    .with_evidence(ev.render(&cluster.members));
    let mut monitor = Monitor::new(&ctx.events, STAGE, artifact(cluster, "comparison table"));
    ctx.ask(
        &prompt,
        &CallSpec::new(tags::COMPARISON_TABLE, cfg.temperature)
            .max_retries(cfg.retries)
            .subject(format!("cluster {}", cluster.cluster_id)),
        &mut ErrorMemory::new(),
        |raw| {
            let r: TableReply = parse_json(raw)?;
            let mut columns = Vec::new();
            for c in r.columns {
                let c = c.trim().to_string();
                if !c.is_empty() && !columns.contains(&c) {
                    columns.push(c);
                }
            }
            if columns.len() < MIN_COLUMNS {
                return Err(format!(
                    "table has {} distinct columns; at least {MIN_COLUMNS} are required",
                    columns.len()
                ));
            }
            let mut rows: BTreeMap<PaperId, ComparisonRow> = BTreeMap::new();
            for row in r.rows {
                let Ok(id) = PaperId::parse(&row.paper_id) else {
                    continue;
                };
                if !cluster.members.contains(&id) {
                    monitor.flag(id.as_str(), "row for a paper outside the cluster");
                    continue;
                }
                let cells = columns
                    .iter()
                    .map(|c| (c.clone(), row.cells.get(c).map(cell_text).unwrap_or_default()))
                    .collect();
                rows.entry(id.clone()).or_insert(ComparisonRow { paper_id: id, cells });
            }
            let missing: Vec<&str> = cluster
                .members
                .iter()
                .filter(|m| !rows.contains_key(*m))
                .map(PaperId::as_str)
                .collect();
            if !missing.is_empty() {
                return Err(format!("rows missing for: {}", missing.join(", ")));
            }
            Ok(ComparisonTable {
                columns,
                rows: rows.into_values().collect(),
            })
        },
    )
}

/// Writes `table` as CSV with a leading `paper_id` column.
pub fn table_to_csv(table: &ComparisonTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["paper_id".to_string()];
    header.extend(table.columns.iter().cloned());
    let to_err = |e: csv::Error| Error::InvalidInput(format!("csv export: {e}"));
    w.write_record(&header).map_err(to_err)?;
    for row in &table.rows {
        let mut rec = vec![row.paper_id.as_str().to_string()];
        rec.extend(
            table
                .columns
                .iter()
                .map(|c| row.cells.get(c).cloned().unwrap_or_default()),
        );
        w.write_record(&rec).map_err(to_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv export: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Deserialize)]
struct QaReply {
    items: Vec<RawQa>,
}

#[derive(Deserialize)]
struct RawQa {
    question: String,
    #[serde(default)]
    related: Vec<String>,
    answer: String,
}

/// Mark keys in `text` that do not name a member of `allowed`.
fn foreign_marks(text: &str, allowed: &BTreeSet<PaperId>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for key in extract_mark_keys(text) {
        let known = PaperId::parse(&key).is_ok_and(|id| allowed.contains(&id));
        if !known && !out.contains(&key) {
            out.push(key);
        }
    }
    out
}

/// Removes marks that do not name a member of `allowed`.
fn strip_foreign_marks(text: &str, allowed: &BTreeSet<PaperId>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (range, key) in mark_spans(text) {
        if PaperId::parse(&key).is_ok_and(|id| allowed.contains(&id)) {
            continue;
        }
        out.push_str(text[last..range.start].trim_end_matches(' '));
        last = range.end;
    }
    out.push_str(&text[last..]);
    out
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        let boundary = matches!(b, b'.' | b'!' | b'?')
            && bytes.get(i + 1).is_none_or(|n| n.is_ascii_whitespace());
        if boundary || b == b'\n' {
            let s = text[start..=i].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// One attribution per sentence that carries at least one known mark.
pub fn attributions_from(text: &str, allowed: &BTreeSet<PaperId>) -> Vec<Attribution> {
    sentences(text)
        .into_iter()
        .filter_map(|s| {
            let mut papers: Vec<PaperId> = Vec::new();
            for key in extract_mark_keys(s) {
                if let Ok(id) = PaperId::parse(&key) {
                    if allowed.contains(&id) && !papers.contains(&id) {
                        papers.push(id);
                    }
                }
            }
            (!papers.is_empty()).then(|| Attribution {
                claim: s.to_string(),
                papers,
            })
        })
        .collect()
}

/// Question-answer items spanning several members. An answer citing
/// outsiders is regenerated once; items still citing outsiders are dropped.
pub fn guided_qa(
    ctx: &Context,
    cluster: &Cluster,
    ev: &Evidence<'_>,
    n_questions: usize,
    cfg: &AnalysisConfig,
) -> Result<Vec<QaItem>> {
    if n_questions == 0 {
        return Err(Error::InvalidInput("n_questions must be at least 1".into()));
    }
    if cluster.members.len() < 2 {
        return Ok(Vec::new());
    }
    let mut monitor = Monitor::new(&ctx.events, STAGE, artifact(cluster, "guided Q&A"));
    let mut memory = ErrorMemory::new();
    let mut kept: Vec<QaItem> = Vec::new();
    for attempt in 0..2 {
        let want = n_questions - kept.len();
        let mut payload = cluster_payload(cluster, ev);
        payload["n_questions"] = json!(want);
        let prompt = Prompt::new(tags::GUIDED_QA, prompts::GUIDED_QA, payload)
            .with_evidence(ev.render(&cluster.members));
        let reply: QaReply = ctx.ask(
            &prompt,
            &CallSpec::new(tags::GUIDED_QA, cfg.temperature)
                .max_retries(cfg.retries)
                .subject(format!("cluster {}", cluster.cluster_id)),
            &mut memory,
            |raw| {
                let r: QaReply = parse_json(raw)?;
                if r.items.is_empty() {
                    return Err("no items were returned".into());
                }
                Ok(r)
            },
        )?;
        let mut bad = Vec::new();
        for item in reply.items.into_iter().take(want) {
            let mut related: Vec<PaperId> = Vec::new();
            for r in &item.related {
                match PaperId::parse(r) {
                    Ok(id) if cluster.members.contains(&id) => {
                        if !related.contains(&id) {
                            related.push(id);
                        }
                    }
                    Ok(id) => monitor.flag(id.as_str(), "related paper outside the cluster"),
                    Err(_) => {}
                }
            }
            let foreign = foreign_marks(&item.answer, &cluster.members);
            if item.question.trim().is_empty() || item.answer.trim().is_empty() {
                bad.push("an item had an empty question or answer".to_string());
            } else if related.len() < 2 {
                bad.push(format!(
                    "question '{}' relates fewer than two member papers",
                    item.question.trim()
                ));
            } else if !foreign.is_empty() {
                if attempt == 1 {
                    for f in &foreign {
                        monitor.flag(f, "answer cites a paper outside the cluster");
                    }
                }
                bad.push(format!(
                    "answer cites papers outside the cluster: {}",
                    foreign.join(", ")
                ));
            } else {
                kept.push(QaItem {
                    question: item.question.trim().to_string(),
                    related,
                    answer: item.answer.trim().to_string(),
                });
            }
        }
        if kept.len() >= n_questions {
            break;
        }
        for b in &bad {
            memory.record(b.clone());
        }
        if attempt == 1 && !bad.is_empty() {
            ctx.events.record(
                STAGE,
                EventKind::Rejection,
                Some(&format!("cluster {}", cluster.cluster_id)),
                format!("dropped {} Q&A items: {}", bad.len(), bad.join("; ")),
            );
        }
    }
    Ok(kept)
}

/// Full per-cluster analysis: graph, table (when ≥2 members), Q&A and
/// attributions.
pub fn analyze_cluster(
    ctx: &Context,
    cluster: &Cluster,
    ev: &Evidence<'_>,
    cfg: &AnalysisConfig,
) -> Result<ClusterAnalysis> {
    let mut a = ClusterAnalysis::empty(cluster.cluster_id);
    a.relation_graph = build_relation_graph(ctx, cluster, ev, cfg)?;
    if cluster.members.len() >= 2 {
        a.comparison_table = build_comparison_table(ctx, cluster, ev, cfg)?;
    }
    a.qa_items = guided_qa(ctx, cluster, ev, cfg.n_questions, cfg)?;
    a.source_attributions = a
        .qa_items
        .iter()
        .flat_map(|q| attributions_from(&q.answer, &cluster.members))
        .collect();
    Ok(a)
}

/// Cross-cluster synthesis. Marks naming unknown papers trigger one retry;
/// any that remain are stripped and reported.
pub fn inter_cluster_analysis(
    ctx: &Context,
    clusters: &[Cluster],
    analyses: &[ClusterAnalysis],
    known: &BTreeSet<PaperId>,
    cfg: &AnalysisConfig,
) -> Result<String> {
    if clusters.len() < 2 {
        return Err(Error::Precondition(format!(
            "inter-cluster analysis needs at least 2 clusters, got {}",
            clusters.len()
        )));
    }
    let payload = json!({
        "clusters": clusters
            .iter()
            .map(|c| json!({
                "cluster_id": c.cluster_id,
                "name": c.name,
                "summary": c.summary,
                "papers": c.members.iter().map(PaperId::as_str).collect::<Vec<_>>(),
            }))
            .collect::<Vec<_>>(),
    });
    let evidence = analyses
        .iter()
        .map(ClusterAnalysis::render)
        .collect::<Vec<_>>()
        .join("\n");
    let prompt =
        Prompt::new(tags::INTER_CLUSTER, prompts::INTER_CLUSTER, payload).with_evidence(evidence);
    let spec = CallSpec::new(tags::INTER_CLUSTER, cfg.temperature).max_retries(cfg.retries);
    let mut memory = ErrorMemory::new();
    let mut text = ctx.ask_text(&prompt, &spec, &mut memory)?;
    let foreign = foreign_marks(&text, known);
    if foreign.is_empty() {
        return Ok(text);
    }
    memory.record(format!(
        "the synthesis cited papers that are not in the input: {}",
        foreign.join(", ")
    ));
    text = ctx.ask_text(&prompt, &spec, &mut memory)?;
    let foreign = foreign_marks(&text, known);
    if !foreign.is_empty() {
        let mut monitor = Monitor::new(&ctx.events, STAGE, "inter-cluster synthesis");
        for f in &foreign {
            monitor.flag(f, "cited paper is not in the substrate");
        }
        text = strip_foreign_marks(&text, known);
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> BTreeSet<PaperId> {
        v.iter().map(|s| PaperId::parse(s).unwrap()).collect()
    }

    #[test]
    fn strip_removes_only_unknown_marks() {
        let allowed = ids(&["p1"]);
        let t = "A <p1> and B <q9>. C.";
        assert_eq!(strip_foreign_marks(t, &allowed), "A <p1> and B. C.");
        assert_eq!(foreign_marks(t, &allowed), vec!["q9".to_string()]);
    }

    #[test]
    fn attributions_follow_sentences() {
        let allowed = ids(&["p1", "p2"]);
        let a = attributions_from("Both agree <p1> <p2>. No marks here. Only <p2>!", &allowed);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].papers.len(), 2);
        assert_eq!(a[1].claim, "Only <p2>!");
    }

    #[test]
    fn sentence_split_keeps_decimals() {
        assert_eq!(sentences("Score 3.5 here. Next"), vec!["Score 3.5 here.", "Next"]);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let t = ComparisonTable {
            columns: vec!["a".into(), "b, c".into()],
            rows: vec![ComparisonRow {
                paper_id: PaperId::parse("p1").unwrap(),
                cells: [("a".to_string(), "x".to_string())].into_iter().collect(),
            }],
        };
        let csv = table_to_csv(&t).unwrap();
        assert_eq!(csv, "paper_id,a,\"b, c\"\np1,x,\n");
    }
}
