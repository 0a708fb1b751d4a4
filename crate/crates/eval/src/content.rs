//! Judge dimensions and the weighted content total.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

pub const CORE_DIMENSIONS: &[&str] = &["synthesis", "organization", "comprehensiveness", "relevance"];
pub const WRITING_DIMENSIONS: &[&str] = &["readability", "academic_rigor", "clarity_coherence"];
pub const DEPTH_DIMENSIONS: &[&str] = &["critical_analysis", "novelty_insights", "specificity", "future_directions"];

// Writing takes the remaining 0.2.
const CORE_WEIGHT: f64 = 0.4;
const DEPTH_WEIGHT: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionGroup {
    Core,
    Writing,
    Depth,
}

impl DimensionGroup {
    pub const ALL: [DimensionGroup; 3] = [DimensionGroup::Core, DimensionGroup::Writing, DimensionGroup::Depth];

    pub fn dimensions(self) -> &'static [&'static str] {
        match self {
            DimensionGroup::Core => CORE_DIMENSIONS,
            DimensionGroup::Writing => WRITING_DIMENSIONS,
            DimensionGroup::Depth => DEPTH_DIMENSIONS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DimensionGroup::Core => "core",
            DimensionGroup::Writing => "writing",
            DimensionGroup::Depth => "depth",
        }
    }
}

fn in_range(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && (1.0..=10.0).contains(&v) {
        Ok(v)
    } else {
        Err(EvalError::InvalidInput(format!("{name} score {v} is outside 1 to 10")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentScores {
    pub core: f64,
    pub writing: f64,
    pub depth: f64,
    #[serde(default)]
    pub sub_scores: BTreeMap<String, f64>,
}

impl ContentScores {
    pub fn new(core: f64, writing: f64, depth: f64) -> Result<Self> {
        Ok(Self {
            core: in_range("core", core)?,
            writing: in_range("writing", writing)?,
            depth: in_range("depth", depth)?,
            sub_scores: BTreeMap::new(),
        })
    }

    /// Group scores as the mean of their dimensions. Every dimension of
    /// every group must be present.
    pub fn from_sub_scores(sub_scores: BTreeMap<String, f64>) -> Result<Self> {
        let mut groups = [0.0; 3];
        for (slot, g) in groups.iter_mut().zip(DimensionGroup::ALL) {
            let mut sum = 0.0;
            for d in g.dimensions() {
                let v = sub_scores
                    .get(*d)
                    .ok_or_else(|| EvalError::InvalidInput(format!("missing score for {d}")))?;
                sum += in_range(d, *v)?;
            }
            *slot = sum / g.dimensions().len() as f64;
        }
        let mut s = Self::new(groups[0], groups[1], groups[2])?;
        s.sub_scores = sub_scores;
        Ok(s)
    }
}

/// Weighted total: core and depth count 0.4 each, writing 0.2.
pub fn weighted_content_score(s: &ContentScores) -> Result<f64> {
    let core = in_range("core", s.core)?;
    let writing = in_range("writing", s.writing)?;
    let depth = in_range("depth", s.depth)?;
    // Written relative to the writing score so equal inputs return exactly
    // that value.
    Ok(writing + CORE_WEIGHT * (core - writing) + DEPTH_WEIGHT * (depth - writing))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(c: f64, w: f64, d: f64) -> f64 {
        weighted_content_score(&ContentScores::new(c, w, d).unwrap()).unwrap()
    }

    #[test]
    fn reported_totals_are_reproduced() {
        assert!((total(9.100, 8.356, 8.333) - 8.644).abs() <= 0.001);
        assert!((total(9.083, 8.311, 8.450) - 8.676).abs() <= 0.001);
        assert!((total(8.938, 8.417, 8.063) - 8.483).abs() <= 0.001);
    }

    #[test]
    fn equal_dimensions_give_that_value() {
        for v in [1.0, 5.5, 7.25, 10.0] {
            assert_eq!(total(v, v, v), v);
        }
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(ContentScores::new(0.5, 5.0, 5.0).is_err());
        let bad = ContentScores {
            core: 5.0,
            writing: 11.0,
            depth: 5.0,
            sub_scores: BTreeMap::new(),
        };
        assert!(matches!(weighted_content_score(&bad), Err(EvalError::InvalidInput(_))));
        assert!(ContentScores::new(f64::NAN, 5.0, 5.0).is_err());
    }

    #[test]
    fn groups_average_their_dimensions() {
        let mut m = BTreeMap::new();
        for g in DimensionGroup::ALL {
            for (i, d) in g.dimensions().iter().enumerate() {
                m.insert(d.to_string(), 6.0 + i as f64);
            }
        }
        let s = ContentScores::from_sub_scores(m).unwrap();
        assert_eq!(s.core, 7.5);
        assert_eq!(s.writing, 7.0);
        assert_eq!(s.depth, 7.5);
        m = s.sub_scores.clone();
        m.remove("specificity");
        assert!(ContentScores::from_sub_scores(m).is_err());
    }
}
