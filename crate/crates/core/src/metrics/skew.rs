//! Max Skew@k.
//!
//! For one ranking with group counts `c_a` over `k_eff` retrieved items and a
//! desired distribution `p`, `skew_a = ln((c_a / k_eff) / p_a)`. MaxSkew is
//! the maximum over groups that appear in the ranking. The report averages
//! MaxSkew over queries and scales it by 100.

use serde::{Deserialize, Serialize};

use super::retrieval::RetrievalRun;
use crate::error::{Error, Result};
use crate::store::AttributeTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DesiredDistribution {
    Named(UniformTag),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniformTag {
    Uniform,
}

impl Default for DesiredDistribution {
    fn default() -> Self {
        DesiredDistribution::Named(UniformTag::Uniform)
    }
}

impl DesiredDistribution {
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn resolve(&self, groups: usize) -> Result<Vec<f64>> {
        match self {
            DesiredDistribution::Named(UniformTag::Uniform) => Ok(vec![1.0 / groups as f64; groups]),
            DesiredDistribution::Explicit(p) => {
                if p.len() != groups {
                    return Err(Error::Shape {
                        expected: groups,
                        actual: p.len(),
                    });
                }
                let sum: f64 = p.iter().sum();
                if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "desired distribution {p:?} must be non-negative and sum to 1"
                    )));
                }
                Ok(p.clone())
            }
        }
    }
}

/// MaxSkew of one ranking's group counts (unscaled). `None` when no group
/// with positive desired share was retrieved.
pub fn max_skew(counts: &[usize], desired: &[f64]) -> Option<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 || !counts.iter().zip(desired).any(|(&c, &p)| c > 0 && p > 0.0) {
        return None;
    }
    counts
        .iter()
        .zip(desired)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &p)| {
            if p == 0.0 {
                f64::INFINITY
            } else {
                ((c as f64 / total as f64) / p).ln()
            }
        })
        .max_by(|a, b| a.total_cmp(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySkew {
    pub query_id: String,
    pub counts: Vec<usize>,
    /// Unscaled; `None` for skipped queries.
    pub max_skew: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    pub attribute: String,
    pub groups: Vec<String>,
    pub k: usize,
    pub desired: Vec<f64>,
    pub per_query: Vec<QuerySkew>,
    /// Mean of the finite per-query values, times 100.
    pub mean_max_skew: Option<f64>,
    pub warnings: Vec<String>,
}

/// Max Skew@k of a retrieval run. `table` labels the gallery rows.
pub fn max_skew_at_k(run: &RetrievalRun, table: &AttributeTable, desired: &DesiredDistribution) -> Result<SkewReport> {
    let g = table.num_groups();
    let p = desired.resolve(g)?;
    if table.labels.iter().all(Option::is_none) {
        return Err(Error::Validation(format!(
            "gallery has no labels for attribute `{}`",
            table.attribute
        )));
    }
    let mut per_query = Vec::with_capacity(run.rankings.len());
    let mut warnings = Vec::new();
    for r in &run.rankings {
        let mut counts = vec![0usize; g];
        for (&row, id) in r.rows.iter().zip(&r.ids) {
            let label = table.labels.get(row).copied().flatten().ok_or_else(|| {
                Error::Validation(format!(
                    "retrieved item `{id}` has no `{}` label",
                    table.attribute
                ))
            })?;
            counts[label] += 1;
        }
        let skew = max_skew(&counts, &p);
        if skew.is_none() {
            warnings.push(format!(
                "query `{}` skipped: no group with positive desired share retrieved",
                r.query_id
            ));
        }
        per_query.push(QuerySkew {
            query_id: r.query_id.clone(),
            counts,
            max_skew: skew,
        });
    }
    let finite: Vec<f64> = per_query
        .iter()
        .filter_map(|q| q.max_skew)
        .filter(|x| x.is_finite())
        .collect();
    let mean_max_skew = (!finite.is_empty()).then(|| 100.0 * finite.iter().sum::<f64>() / finite.len() as f64);
    Ok(SkewReport {
        attribute: table.attribute.clone(),
        groups: table.groups.clone(),
        k: run.k,
        desired: p,
        per_query,
        mean_max_skew,
        warnings,
    })
}
