//! Dispersion and inter-rater agreement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

/// Denominator convention for the standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deviation {
    /// Divide by n - 1.
    #[default]
    Sample,
    /// Divide by n.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub mean: f64,
    pub std: f64,
    pub cv_percent: f64,
    pub max_abs_dev: f64,
    pub range: f64,
}

/// Spread of repeated scores using the sample convention.
pub fn coefficient_of_variation(samples: &[f64]) -> Result<Dispersion> {
    dispersion(samples, Deviation::Sample)
}

pub fn dispersion(samples: &[f64], convention: Deviation) -> Result<Dispersion> {
    if samples.len() < 2 {
        return Err(EvalError::InvalidInput(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(EvalError::InvalidInput("samples must be finite".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    let denom = match convention {
        Deviation::Sample => n - 1.0,
        Deviation::Population => n,
    };
    let std = (ss / denom).sqrt();
    if mean == 0.0 {
        return Err(EvalError::Undefined("coefficient of variation of samples with zero mean".into()));
    }
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Dispersion {
        mean,
        std,
        cv_percent: 100.0 * std / mean,
        max_abs_dev: samples.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max),
        range: max - min,
    })
}

/// Agreement of two raters corrected for chance. When chance agreement is
/// certain (both raters always give the same single label) the result is 1.
pub fn cohens_kappa<L: Ord>(a: &[L], b: &[L]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::InvalidInput(format!(
            "rater sequences differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(EvalError::InvalidInput("no rated items".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut marg: BTreeMap<&L, (usize, usize)> = BTreeMap::new();
    for x in a {
        marg.entry(x).or_default().0 += 1;
    }
    for y in b {
        marg.entry(y).or_default().1 += 1;
    }
    let certain = marg.len() == 1;
    if certain {
        return Ok(1.0);
    }
    let p_o = agree / n;
    let p_e: f64 = marg.values().map(|(x, y)| (*x as f64 / n) * (*y as f64 / n)).sum();
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Per-item category counts with a fixed number of raters per item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    counts: Vec<Vec<usize>>,
    raters: usize,
}

impl RatingMatrix {
    /// From `counts[item][category]`. Every row must sum to the same rater
    /// count, which must be at least 2.
    pub fn from_counts(counts: Vec<Vec<usize>>) -> Result<Self> {
        let first = counts
            .first()
            .ok_or_else(|| EvalError::InvalidInput("no rated items".into()))?;
        let width = first.len();
        let raters: usize = first.iter().sum();
        for (i, row) in counts.iter().enumerate() {
            if row.len() != width {
                return Err(EvalError::InvalidInput(format!("item {i} has {} categories, expected {width}", row.len())));
            }
            let n: usize = row.iter().sum();
            if n != raters {
                return Err(EvalError::InvalidInput(format!("item {i} has {n} ratings, expected {raters}")));
            }
        }
        if raters < 2 {
            return Err(EvalError::InvalidInput("need at least 2 raters per item".into()));
        }
        Ok(Self { counts, raters })
    }

    /// From per-item label lists over a declared label set.
    pub fn from_labels<L: PartialEq + std::fmt::Debug>(items: &[Vec<L>], labels: &[L]) -> Result<Self> {
        let counts = items
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut c = vec![0; labels.len()];
                for l in row {
                    let k = labels
                        .iter()
                        .position(|x| x == l)
                        .ok_or_else(|| EvalError::InvalidInput(format!("item {i} uses undeclared label {l:?}")))?;
                    c[k] += 1;
                }
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_counts(counts)
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn raters(&self) -> usize {
        self.raters
    }
}

/// Chance-corrected agreement among a rater panel. If every rating falls in
/// one category, agreement is certain: the result is 1 when every item is
/// unanimous and otherwise undefined.
pub fn fleiss_kappa(m: &RatingMatrix) -> Result<f64> {
    let items = m.counts.len();
    let n = m.raters;
    let width = m.counts[0].len();
    let total = items * n;
    let col: Vec<usize> = (0..width).map(|c| m.counts.iter().map(|r| r[c]).sum()).collect();
    let unanimous = m.counts.iter().all(|r| r.contains(&n));
    if col.contains(&total) {
        return if unanimous {
            Ok(1.0)
        } else {
            Err(EvalError::Undefined("chance agreement is certain but items disagree".into()))
        };
    }
    let pair_norm = (n * (n - 1)) as f64;
    let p_bar = m
        .counts
        .iter()
        .map(|r| r.iter().map(|&x| (x * x.saturating_sub(1)) as f64).sum::<f64>() / pair_norm)
        .sum::<f64>()
        / items as f64;
    let p_e: f64 = col.iter().map(|&c| (c as f64 / total as f64).powi(2)).sum();
    Ok((p_bar - p_e) / (1.0 - p_e))
}
