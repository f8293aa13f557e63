use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::retrieval::cosine;
use crate::error::{Error, Result};
use crate::store::{AttributeTable, EmbeddingDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGapReport {
    pub attribute: String,
    pub pairs: usize,
    pub seed: u64,
    pub same_group_mean: f64,
    pub random_mean: f64,
    /// `same_group_mean - random_mean`.
    pub gap: f64,
    pub warnings: Vec<String>,
}

/// Mean cosine similarity of random same-group pairs minus that of random
/// unconstrained pairs. A group is drawn uniformly among groups with at
/// least two members, then a pair of distinct members inside it.
pub fn similarity_gap(ds: &EmbeddingDataset, table: &AttributeTable, pairs: usize, seed: u64) -> Result<SimilarityGapReport> {
    if table.labels.len() != ds.n() {
        return Err(Error::Shape {
            expected: ds.n(),
            actual: table.labels.len(),
        });
    }
    if pairs == 0 {
        return Err(Error::Argument("pair count must be >= 1".into()));
    }
    if ds.n() < 2 {
        return Err(Error::EmptyDataset("need at least two rows".into()));
    }
    let mut warnings = Vec::new();
    let mut eligible = Vec::new();
    for g in 0..table.num_groups() {
        let m = table.members(g);
        if m.len() >= 2 {
            eligible.push(m);
        } else {
            warnings.push(format!("group `{}` has fewer than two members", table.groups[g]));
        }
    }
    if eligible.is_empty() {
        return Err(Error::Validation("no group has at least two members".into()));
    }
    let rows: Vec<Vec<f64>> = (0..ds.n()).map(|i| ds.row_f64(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distinct = |rng: &mut ChaCha8Rng, n: usize| {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        (i, j)
    };
    let mut same = 0.0;
    for _ in 0..pairs {
        let m = &eligible[rng.gen_range(0..eligible.len())];
        let (a, b) = distinct(&mut rng, m.len());
        same += cosine(&rows[m[a]], &rows[m[b]]);
    }
    let mut random = 0.0;
    for _ in 0..pairs {
        let (a, b) = distinct(&mut rng, ds.n());
        random += cosine(&rows[a], &rows[b]);
    }
    let same_group_mean = same / pairs as f64;
    let random_mean = random / pairs as f64;
    Ok(SimilarityGapReport {
        attribute: table.attribute.clone(),
        pairs,
        seed,
        same_group_mean,
        random_mean,
        gap: same_group_mean - random_mean,
        warnings,
    })
}
