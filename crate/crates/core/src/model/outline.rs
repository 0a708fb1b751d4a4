use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::PaperId;
use crate::error::{Error, Result};

/// Sections and subsections only: root → section → subsection.
pub const MAX_OUTLINE_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlineNode {
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub children: Vec<OutlineNode>,
    #[serde(default)]
    pub assigned_papers: BTreeSet<PaperId>,
}

/// Path of titles from the first section downwards (the root is implicit).
pub type NodePath = Vec<String>;

impl OutlineNode {
    pub fn new(title: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            description: description.into(),
            children: Vec::new(),
            assigned_papers: BTreeSet::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<OutlineNode>) -> Self {
        self.children = children;
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Checks sibling-title uniqueness, non-empty descriptions and the depth cap.
    pub fn validate(&self) -> Result<()> {
        fn walk(node: &OutlineNode, depth: usize, path: &str) -> Result<()> {
            if node.description.trim().is_empty() {
                return Err(Error::Integrity(format!(
                    "outline node '{path}' has an empty description"
                )));
            }
            if node.title.trim().is_empty() {
                return Err(Error::Integrity(format!(
                    "outline node under '{path}' has an empty title"
                )));
            }
            if depth > MAX_OUTLINE_DEPTH {
                return Err(Error::Integrity(format!(
                    "outline node '{path}' nests deeper than section/subsection"
                )));
            }
            let mut seen = HashSet::new();
            for c in &node.children {
                if !seen.insert(c.title.trim()) {
                    return Err(Error::Integrity(format!(
                        "duplicate sibling title '{}' under '{path}'",
                        c.title
                    )));
                }
                walk(c, depth + 1, &format!("{path}/{}", c.title))?;
            }
            Ok(())
        }
        walk(self, 0, &self.title)
    }

    /// Pre-order walk over all non-root nodes with their paths.
    pub fn nodes(&self) -> Vec<(NodePath, &OutlineNode)> {
        let mut out = Vec::new();
        for s in &self.children {
            out.push((vec![s.title.clone()], s));
            for sub in &s.children {
                out.push((vec![s.title.clone(), sub.title.clone()], sub));
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<(NodePath, &OutlineNode)> {
        self.nodes().into_iter().filter(|(_, n)| n.is_leaf()).collect()
    }

    pub fn find(&self, path: &[String]) -> Option<&OutlineNode> {
        let mut node = self;
        for title in path {
            node = node.children.iter().find(|c| &c.title == title)?;
        }
        Some(node)
    }

    pub fn find_mut(&mut self, path: &[String]) -> Option<&mut OutlineNode> {
        let mut node = self;
        for title in path {
            node = node.children.iter_mut().find(|c| &c.title == title)?;
        }
        Some(node)
    }

    /// Papers assigned to this node or any descendant.
    pub fn assigned_union(&self) -> BTreeSet<PaperId> {
        let mut set = self.assigned_papers.clone();
        for c in &self.children {
            set.extend(c.assigned_union());
        }
        set
    }

    /// Indented text form used in prompts.
    pub fn render(&self) -> String {
        let mut out = format!("{}\n", self.title);
        for s in &self.children {
            out.push_str(&format!("- {}: {}\n", s.title, s.description));
            for sub in &s.children {
                out.push_str(&format!("  - {}: {}\n", sub.title, sub.description));
            }
        }
        out
    }
}
