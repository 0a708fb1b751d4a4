use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PaperId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: u32,
    pub name: String,
    pub summary: String,
    pub members: BTreeSet<PaperId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "label")]
pub enum Relation {
    Foundation,
    Extension,
    Substitution,
    Other(String),
}

impl Relation {
    pub fn parse(label: &str) -> Self {
        match label.trim().to_ascii_lowercase().as_str() {
            "foundation" => Relation::Foundation,
            "extension" => Relation::Extension,
            "substitution" => Relation::Substitution,
            other => Relation::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Foundation => f.write_str("foundation"),
            Relation::Extension => f.write_str("extension"),
            Relation::Substitution => f.write_str("substitution"),
            Relation::Other(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub from: PaperId,
    pub to: PaperId,
    pub relation: Relation,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub paper_id: PaperId,
    /// Cells keyed by column name.
    pub cells: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    /// One row per member paper, ordered by paper id.
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub related: Vec<PaperId>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub claim: String,
    pub papers: Vec<PaperId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAnalysis {
    pub cluster_id: u32,
    pub relation_graph: Vec<RelationEdge>,
    pub comparison_table: ComparisonTable,
    pub qa_items: Vec<QaItem>,
    pub source_attributions: Vec<Attribution>,
}

impl ClusterAnalysis {
    pub fn empty(cluster_id: u32) -> Self {
        Self {
            cluster_id,
            relation_graph: Vec::new(),
            comparison_table: ComparisonTable::default(),
            qa_items: Vec::new(),
            source_attributions: Vec::new(),
        }
    }

    /// Every paper id this analysis mentions.
    pub fn referenced_ids(&self) -> BTreeSet<&PaperId> {
        let mut ids = BTreeSet::new();
        for e in &self.relation_graph {
            ids.insert(&e.from);
            ids.insert(&e.to);
        }
        ids.extend(self.comparison_table.rows.iter().map(|r| &r.paper_id));
        for qa in &self.qa_items {
            ids.extend(qa.related.iter());
        }
        for a in &self.source_attributions {
            ids.extend(a.papers.iter());
        }
        ids
    }

    /// Compact plain-text rendering for prompts.
    pub fn render(&self) -> String {
        let mut out = format!("Cluster {} analysis\n", self.cluster_id);
        for e in &self.relation_graph {
            out.push_str(&format!(
                "- {} --{}--> {}: {}\n",
                e.from, e.relation, e.to, e.description
            ));
        }
        if !self.comparison_table.columns.is_empty() {
            out.push_str(&format!(
                "Comparison columns: {}\n",
                self.comparison_table.columns.join(" | ")
            ));
            for row in &self.comparison_table.rows {
                let (id, cells) = (&row.paper_id, &row.cells);
                let vals: Vec<&str> = self
                    .comparison_table
                    .columns
                    .iter()
                    .map(|c| cells.get(c).map(String::as_str).unwrap_or(""))
                    .collect();
                out.push_str(&format!("{id}: {}\n", vals.join(" | ")));
            }
        }
        for qa in &self.qa_items {
            out.push_str(&format!("Q: {}\nA: {}\n", qa.question, qa.answer));
        }
        out
    }
}
