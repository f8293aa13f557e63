//! Planted-bias embedding data with known ground truth.
//!
//! Each group owns a unit direction; a row of group `g` is
//! `base_offset + strength_g * direction_g + noise_scale * eta` with `eta`
//! standard normal. Rows are interleaved round-robin across groups so that a
//! noise-free gallery breaks similarity ties evenly.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Query;
use crate::store::{AttributeTable, EmbeddingDataset};

/// Query noise relative to the gallery's `noise_scale`.
pub const QUERY_NOISE_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedGroup {
    pub name: String,
    pub count: usize,
    pub direction: Vec<f64>,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedBiasSpec {
    #[serde(default = "default_attribute")]
    pub attribute: String,
    pub d: usize,
    pub groups: Vec<PlantedGroup>,
    pub noise_scale: f64,
    pub base_offset: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_attribute() -> String {
    "group".into()
}

fn unit(d: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[axis] = 1.0;
    v
}

impl PlantedBiasSpec {
    /// Groups on the first axes, `base` along the next free axis.
    pub fn orthogonal(d: usize, groups: &[(&str, usize)], strength: f64, noise_scale: f64, base: f64, seed: u64) -> Result<Self> {
        Self::correlated(d, groups, strength, noise_scale, base, 0.0, seed)
    }

    /// Like [`orthogonal`](Self::orthogonal), but every group after the first
    /// is tilted toward the first direction so that pairwise dot products
    /// with it equal `correlation`.
    pub fn correlated(
        d: usize,
        groups: &[(&str, usize)],
        strength: f64,
        noise_scale: f64,
        base: f64,
        correlation: f64,
        seed: u64,
    ) -> Result<Self> {
        if d < groups.len() + 1 {
            return Err(Error::Argument(format!(
                "d = {d} leaves no free axis for {} groups plus an offset",
                groups.len()
            )));
        }
        if !(-1.0..=1.0).contains(&correlation) {
            return Err(Error::Argument(format!("correlation {correlation} outside [-1, 1]")));
        }
        let tilt = (1.0 - correlation * correlation).sqrt();
        let groups = groups
            .iter()
            .enumerate()
            .map(|(g, &(name, count))| {
                let direction = if g == 0 {
                    unit(d, 0)
                } else {
                    let mut v = unit(d, g);
                    v[g] = tilt;
                    v[0] = correlation;
                    v
                };
                PlantedGroup {
                    name: name.to_string(),
                    count,
                    direction,
                    strength,
                }
            })
            .collect::<Vec<_>>();
        let base_offset = {
            let mut v = vec![0.0; d];
            v[groups.len()] = base;
            v
        };
        let spec = Self {
            attribute: default_attribute(),
            d,
            groups,
            noise_scale,
            base_offset,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Validation("d must be >= 1".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Validation("at least one group is required".into()));
        }
        let mut names = BTreeSet::new();
        for g in &self.groups {
            if !names.insert(g.name.as_str()) {
                return Err(Error::Validation(format!("duplicate group `{}`", g.name)));
            }
            if g.count < 2 {
                return Err(Error::Validation(format!("group `{}` needs count >= 2", g.name)));
            }
            if g.direction.len() != self.d {
                return Err(Error::Shape {
                    expected: self.d,
                    actual: g.direction.len(),
                });
            }
            let norm = g.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "direction of `{}` has norm {norm}, expected 1",
                    g.name
                )));
            }
            if !(g.strength > 0.0 && g.strength.is_finite()) {
                return Err(Error::Validation(format!("strength of `{}` must be positive", g.name)));
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Validation(format!("noise_scale {} must be >= 0", self.noise_scale)));
        }
        if self.base_offset.len() != self.d {
            return Err(Error::Shape {
                expected: self.d,
                actual: self.base_offset.len(),
            });
        }
        if self.base_offset.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("base_offset must be finite".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }

    /// Pairwise direction dot products, `dots[a][b]`.
    pub fn direction_dots(&self) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|a| {
                self.groups
                    .iter()
                    .map(|b| a.direction.iter().zip(&b.direction).map(|(x, y)| x * y).sum())
                    .collect()
            })
            .collect()
    }

    /// Noise-free center of group `g`.
    pub fn group_center(&self, g: usize) -> Vec<f64> {
        let grp = &self.groups[g];
        self.base_offset
            .iter()
            .zip(&grp.direction)
            .map(|(b, u)| b + grp.strength * u)
            .collect()
    }

    /// Group index of every row, in generation order.
    pub fn row_groups(&self) -> Vec<usize> {
        let mut left: Vec<usize> = self.groups.iter().map(|g| g.count).collect();
        let mut out = Vec::with_capacity(self.n());
        while out.len() < self.n() {
            for (g, l) in left.iter_mut().enumerate() {
                if *l > 0 {
                    *l -= 1;
                    out.push(g);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Gallery and its labels. Ids are `{group}-{i}` with `i` counting within
/// the group.
pub fn generate_dataset(spec: &PlantedBiasSpec) -> Result<(EmbeddingDataset, AttributeTable)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups = spec.row_groups();
    let centers: Vec<Vec<f64>> = (0..spec.groups.len()).map(|g| spec.group_center(g)).collect();
    let mut seen = vec![0usize; spec.groups.len()];
    let mut x = Array2::<f32>::zeros((groups.len(), spec.d));
    let mut ids = Vec::with_capacity(groups.len());
    for (i, &g) in groups.iter().enumerate() {
        for (c, &m) in centers[g].iter().enumerate() {
            let eta: f64 = StandardNormal.sample(&mut rng);
            x[[i, c]] = (m + spec.noise_scale * eta) as f32;
        }
        ids.push(format!("{}-{}", spec.groups[g].name, seen[g]));
        seen[g] += 1;
    }
    let ds = EmbeddingDataset::new(x, ids)?;
    let table = AttributeTable::new(
        spec.attribute.clone(),
        spec.groups.iter().map(|g| g.name.clone()).collect(),
        groups.into_iter().map(Some).collect(),
    )?;
    Ok((ds, table))
}

/// `per_group` queries leaning toward each group in turn:
/// `base_offset + bias_mix * direction_g + noise`. Ids are
/// `neutral-{group}-{i}`.
pub fn generate_biased_queries(spec: &PlantedBiasSpec, per_group: usize, bias_mix: f64) -> Result<Vec<Query>> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&bias_mix) {
        return Err(Error::Argument(format!("bias_mix {bias_mix} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5155_4552_5953_0000);
    let sigma = QUERY_NOISE_RATIO * spec.noise_scale;
    let mut out = Vec::with_capacity(per_group * spec.groups.len());
    for grp in &spec.groups {
        for i in 0..per_group {
            let vector = spec
                .base_offset
                .iter()
                .zip(&grp.direction)
                .map(|(b, u)| {
                    let eta: f64 = StandardNormal.sample(&mut rng);
                    b + bias_mix * u + sigma * eta
                })
                .collect();
            out.push(Query {
                id: format!("neutral-{}-{i}", grp.name),
                vector,
            });
        }
    }
    Ok(out)
}

/// Exhaustive per-query MaxSkew (unscaled, uniform desired distribution)
/// against the gallery generated from `spec`: full cosine matrix, stable
/// sort, direct count. `None` marks a query with nothing retrieved.
pub fn oracle_expected_skew(spec: &PlantedBiasSpec, queries: &[Query], k: usize) -> Result<Vec<Option<f64>>> {
    let (ds, table) = generate_dataset(spec)?;
    oracle_skew_on(&ds, &table, queries, k)
}

/// The same exhaustive computation on an arbitrary labeled gallery.
pub fn oracle_skew_on(ds: &EmbeddingDataset, table: &AttributeTable, queries: &[Query], k: usize) -> Result<Vec<Option<f64>>> {
    let n = ds.n();
    let gallery: Vec<Vec<f64>> = (0..n).map(|i| ds.row_f64(i)).collect();
    let gnorm: Vec<f64> = gallery.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut sims = vec![vec![0.0f64; n]; queries.len()];
    for (qi, q) in queries.iter().enumerate() {
        let qn = q.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..n {
            let dot: f64 = gallery[i].iter().zip(&q.vector).map(|(a, b)| a * b).sum();
            sims[qi][i] = dot / (qn * gnorm[i]);
        }
    }
    let groups = table.num_groups() as f64;
    let mut out = Vec::with_capacity(queries.len());
    for row in &sims {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).expect("finite similarity"));
        order.truncate(k);
        let mut counts = vec![0usize; table.num_groups()];
        for &i in &order {
            let g = table.labels[i].ok_or_else(|| Error::Validation(format!("row {i} is unlabeled")))?;
            counts[g] += 1;
        }
        let total = order.len() as f64;
        let best = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| ((c as f64 / total) * groups).ln())
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
        out.push(best);
    }
    Ok(out)
}
