//! Social-neuron probing.
//!
//! A latent is *effective* for group `g` when it fires on at least
//! `floor(tau * S_g)` of the group's samples. Group-specific latents are the
//! effective ones no other group shares; they are ranked by mean activation
//! over the whole group (zeros included) and the strongest one per group
//! goes into the bias set.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::{encode, SaeParams, SparseActivation};
use crate::store::{AttributeTable, EmbeddingDataset};

/// Number of top-activating sample ids emitted per selected neuron.
pub const TOP_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint: String,
    pub dataset: String,
}

/// Per-sample SAE codes for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    omega: usize,
    rows: Vec<SparseActivation>,
    ids: Vec<String>,
    pub provenance: Provenance,
}

impl ActivationMatrix {
    pub fn new(omega: usize, rows: Vec<SparseActivation>, ids: Vec<String>, provenance: Provenance) -> Result<Self> {
        if rows.len() != ids.len() {
            return Err(Error::Shape {
                expected: rows.len(),
                actual: ids.len(),
            });
        }
        if let Some(i) = rows.iter().position(|r| r.dim() != omega) {
            return Err(Error::Validation(format!("row {i} has dimension != {omega}")));
        }
        if provenance.checkpoint.is_empty() || provenance.dataset.is_empty() {
            return Err(Error::Validation("provenance checksums must be non-empty".into()));
        }
        Ok(Self {
            omega,
            rows,
            ids,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn rows(&self) -> &[SparseActivation] {
        &self.rows
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Encodes every row of `ds`.
pub fn compute_activations(ds: &EmbeddingDataset, params: &SaeParams, k: usize) -> Result<ActivationMatrix> {
    if ds.d() != params.d() {
        return Err(Error::Shape {
            expected: params.d(),
            actual: ds.d(),
        });
    }
    let rows = (0..ds.n())
        .into_par_iter()
        .map(|i| encode(&ds.row_f64(i), params, k))
        .collect::<Result<Vec<_>>>()?;
    ActivationMatrix::new(
        params.omega(),
        rows,
        ds.ids().to_vec(),
        Provenance {
            checkpoint: params.checksum(),
            dataset: ds.checksum(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSet {
    pub group: String,
    pub neurons: Vec<usize>,
    pub tau: f64,
    pub group_size: usize,
}

fn check_alignment(acts: &ActivationMatrix, table: &AttributeTable) -> Result<()> {
    if table.labels.len() != acts.n() {
        return Err(Error::Shape {
            expected: acts.n(),
            actual: table.labels.len(),
        });
    }
    Ok(())
}

/// Firing threshold `floor(tau * S_g)`.
pub fn firing_threshold(tau: f64, group_size: usize) -> usize {
    (tau * group_size as f64).floor() as usize
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Argument(format!("tau {tau} outside [0, 1]")));
    }
    Ok(())
}

/// Latents firing on at least `floor(tau * S_g)` samples of `group`.
pub fn effective_neurons(acts: &ActivationMatrix, table: &AttributeTable, group: &str, tau: f64) -> Result<EffectiveSet> {
    check_tau(tau)?;
    check_alignment(acts, table)?;
    let g = table.group_index(group)?;
    let members = table.members(g);
    if members.is_empty() {
        return Err(Error::EmptyDataset(format!("group `{group}` has no labeled samples")));
    }
    let mut counts = vec![0usize; acts.omega()];
    for &i in &members {
        for j in acts.rows[i].indices() {
            counts[j] += 1;
        }
    }
    let threshold = firing_threshold(tau, members.len());
    let neurons = (0..acts.omega()).filter(|&j| counts[j] >= threshold).collect();
    Ok(EffectiveSet {
        group: group.to_owned(),
        neurons,
        tau,
        group_size: members.len(),
    })
}

/// `N_g = E_g \ union_{h != g} E_h` for every group, in input order.
pub fn group_specific(sets: &[EffectiveSet]) -> Result<Vec<Vec<usize>>> {
    if sets.len() < 2 {
        return Err(Error::Argument(
            "group-specific neurons need at least two groups".into(),
        ));
    }
    Ok((0..sets.len())
        .map(|g| {
            let others: BTreeSet<usize> = sets
                .iter()
                .enumerate()
                .filter(|(h, _)| *h != g)
                .flat_map(|(_, s)| s.neurons.iter().copied())
                .collect();
            sets[g]
                .neurons
                .iter()
                .copied()
                .filter(|j| !others.contains(j))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedNeuron {
    pub neuron: usize,
    pub mean_activation: f64,
}

/// Candidates sorted by mean activation over all `S_g` samples of `group`,
/// descending, ties to the lower index.
pub fn rank_by_mean_activation(
    acts: &ActivationMatrix,
    table: &AttributeTable,
    group: &str,
    candidates: &[usize],
) -> Result<Vec<RankedNeuron>> {
    check_alignment(acts, table)?;
    let g = table.group_index(group)?;
    if let Some(&j) = candidates.iter().find(|&&j| j >= acts.omega()) {
        return Err(Error::Range {
            what: "latent index",
            value: j,
            lo: 0,
            hi: acts.omega() - 1,
        });
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let members = table.members(g);
    if members.is_empty() {
        return Err(Error::EmptyDataset(format!("group `{group}` has no labeled samples")));
    }
    let mut sums = vec![0.0; acts.omega()];
    for &i in &members {
        for &(j, x) in acts.rows[i].entries() {
            sums[j] += x;
        }
    }
    let s_g = members.len() as f64;
    let mut ranked: Vec<RankedNeuron> = candidates
        .iter()
        .map(|&j| RankedNeuron {
            neuron: j,
            mean_activation: sums[j] / s_g,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.mean_activation
            .total_cmp(&a.mean_activation)
            .then(a.neuron.cmp(&b.neuron))
    });
    ranked.dedup_by_key(|r| r.neuron);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    /// The single strongest group-specific neuron per group.
    #[serde(rename = "top-1")]
    TopOne,
    /// Every group-specific neuron.
    AllEffective,
}

impl std::str::FromStr for ProbeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top-1" | "top1" | "top" => Ok(ProbeMode::TopOne),
            "all-effective" | "all" => Ok(ProbeMode::AllEffective),
            other => Err(Error::Argument(format!("unknown probe mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSample {
    pub id: String,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProbe {
    pub group: String,
    pub size: usize,
    pub effective: Vec<usize>,
    pub specific: Vec<usize>,
    pub ranking: Vec<RankedNeuron>,
    pub selected: Option<usize>,
    /// Highest-activating dataset samples for `selected`.
    pub top_samples: Vec<TopSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialNeuronReport {
    pub attribute: String,
    pub tau: f64,
    pub mode: ProbeMode,
    pub omega: usize,
    pub groups: Vec<GroupProbe>,
    pub bias_set: Vec<usize>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl SocialNeuronReport {
    /// Checks the structural invariants of a report.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        for (g, gp) in self.groups.iter().enumerate() {
            let others: BTreeSet<usize> = self
                .groups
                .iter()
                .enumerate()
                .filter(|(h, _)| *h != g)
                .flat_map(|(_, o)| o.effective.iter().copied())
                .collect();
            let expect: Vec<usize> = gp.effective.iter().copied().filter(|j| !others.contains(j)).collect();
            if expect != gp.specific {
                return fail(format!("group `{}`: specific set is not E_g minus the others", gp.group));
            }
            match gp.selected {
                Some(j) => {
                    if !gp.specific.contains(&j) {
                        return fail(format!("group `{}`: selected {j} not group-specific", gp.group));
                    }
                    if gp.ranking.first().map(|r| r.neuron) != Some(j) {
                        return fail(format!("group `{}`: selected {j} is not the top-ranked", gp.group));
                    }
                }
                None if !gp.specific.is_empty() => {
                    return fail(format!("group `{}`: specific neurons but none selected", gp.group));
                }
                None => {}
            }
        }
        for (g, a) in self.groups.iter().enumerate() {
            for b in &self.groups[g + 1..] {
                if a.specific.iter().any(|j| b.specific.contains(j)) {
                    return fail(format!("groups `{}` and `{}` share a specific neuron", a.group, b.group));
                }
            }
        }
        let expect: BTreeSet<usize> = match self.mode {
            ProbeMode::TopOne => self.groups.iter().filter_map(|g| g.selected).collect(),
            ProbeMode::AllEffective => self.groups.iter().flat_map(|g| g.specific.iter().copied()).collect(),
        };
        if expect.into_iter().collect::<Vec<_>>() != self.bias_set {
            return fail("bias set does not match the selection mode".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text)?;
        report.check_invariants()?;
        Ok(report)
    }
}

/// Union of bias sets, e.g. across attributes.
pub fn union_bias_sets<'a>(reports: impl IntoIterator<Item = &'a SocialNeuronReport>) -> Vec<usize> {
    reports
        .into_iter()
        .flat_map(|r| r.bias_set.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn top_samples(acts: &ActivationMatrix, j: usize) -> Vec<TopSample> {
    let mut hits: Vec<(usize, f64)> = acts
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let x = r.get(j);
            (x > 0.0).then_some((i, x))
        })
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    hits.truncate(TOP_SAMPLES);
    hits.into_iter()
        .map(|(i, x)| TopSample {
            id: acts.ids[i].clone(),
            activation: x,
        })
        .collect()
}

/// Full probing procedure for one attribute.
pub fn build_report(acts: &ActivationMatrix, table: &AttributeTable, tau: f64, mode: ProbeMode) -> Result<SocialNeuronReport> {
    check_tau(tau)?;
    check_alignment(acts, table)?;
    if table.num_groups() < 2 {
        return Err(Error::Argument(format!(
            "attribute `{}` needs at least two groups",
            table.attribute
        )));
    }
    let sizes = table.group_sizes();
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyDataset(format!(
            "group `{}` has no labeled samples",
            table.groups[g]
        )));
    }
    let effective = table
        .groups
        .par_iter()
        .map(|g| effective_neurons(acts, table, g, tau))
        .collect::<Result<Vec<_>>>()?;
    let specific = group_specific(&effective)?;

    let mut warnings = Vec::new();
    let mut groups = Vec::with_capacity(table.num_groups());
    for ((name, e), n_g) in table.groups.iter().zip(effective).zip(specific) {
        let ranking = rank_by_mean_activation(acts, table, name, &n_g)?;
        let selected = ranking.first().map(|r| r.neuron);
        if selected.is_none() {
            warnings.push(format!("group `{name}`: no specific neuron"));
        }
        groups.push(GroupProbe {
            group: name.clone(),
            size: e.group_size,
            effective: e.neurons,
            specific: n_g,
            ranking,
            selected,
            top_samples: selected.map(|j| top_samples(acts, j)).unwrap_or_default(),
        });
    }
    let bias_set: BTreeSet<usize> = match mode {
        ProbeMode::TopOne => groups.iter().filter_map(|g| g.selected).collect(),
        ProbeMode::AllEffective => groups.iter().flat_map(|g| g.specific.iter().copied()).collect(),
    };
    let report = SocialNeuronReport {
        attribute: table.attribute.clone(),
        tau,
        mode,
        omega: acts.omega(),
        groups,
        bias_set: bias_set.into_iter().collect(),
        warnings,
        provenance: acts.provenance.clone(),
    };
    report.check_invariants()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            checkpoint: "c".into(),
            dataset: "d".into(),
        }
    }

    fn matrix(omega: usize, dense: &[Vec<f64>]) -> ActivationMatrix {
        let rows = dense
            .iter()
            .map(|r| {
                SparseActivation::new(
                    omega,
                    r.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(j, &x)| (j, x)).collect(),
                )
                .unwrap()
            })
            .collect();
        let ids = (0..dense.len()).map(|i| format!("s{i}")).collect();
        ActivationMatrix::new(omega, rows, ids, prov()).unwrap()
    }

    fn table(labels: &[usize], groups: &[&str]) -> AttributeTable {
        AttributeTable::new(
            "attr".into(),
            groups.iter().map(|s| s.to_string()).collect(),
            labels.iter().map(|&l| Some(l)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn tau_zero_admits_everything() {
        let acts = matrix(3, &[vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let t = table(&[0, 1], &["a", "b"]);
        assert_eq!(effective_neurons(&acts, &t, "a", 0.0).unwrap().neurons, vec![0, 1, 2]);
    }

    #[test]
    fn floor_threshold_cases() {
        // Neuron 0 fires in 3 of 4 rows.
        let acts = matrix(
            2,
            &[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]],
        );
        let t = table(&[0, 0, 0, 0], &["a", "b"]);
        assert!(effective_neurons(&acts, &t, "a", 0.9).unwrap().neurons.contains(&0));
        assert!(!effective_neurons(&acts, &t, "a", 1.0).unwrap().neurons.contains(&0));

        // S_g = 5, tau = 0.1: floor(0.5) = 0 so a never-firing neuron qualifies.
        let acts = matrix(1, &vec![vec![0.0]; 5]);
        let t = table(&[0; 5], &["a", "b"]);
        assert_eq!(firing_threshold(0.1, 5), 0);
        assert_eq!(effective_neurons(&acts, &t, "a", 0.1).unwrap().neurons, vec![0]);
    }

    #[test]
    fn effective_errors() {
        let acts = matrix(1, &[vec![1.0]]);
        let t = table(&[0], &["a", "b"]);
        assert!(matches!(effective_neurons(&acts, &t, "zz", 0.5), Err(Error::Lookup { .. })));
        assert!(matches!(effective_neurons(&acts, &t, "a", 1.1), Err(Error::Argument(_))));
    }

    fn eset(g: &str, n: &[usize]) -> EffectiveSet {
        EffectiveSet {
            group: g.into(),
            neurons: n.to_vec(),
            tau: 0.5,
            group_size: 1,
        }
    }

    #[test]
    fn set_difference() {
        let n = group_specific(&[eset("a", &[1, 2]), eset("b", &[2, 3])]).unwrap();
        assert_eq!(n, vec![vec![1], vec![3]]);
        let n = group_specific(&[eset("a", &[1, 2]), eset("b", &[1, 2])]).unwrap();
        assert_eq!(n, vec![Vec::<usize>::new(), vec![]]);
        assert!(group_specific(&[eset("a", &[1])]).is_err());
    }

    #[test]
    fn mean_includes_zero_samples() {
        let acts = matrix(1, &[vec![2.0], vec![0.0], vec![4.0]]);
        let t = table(&[0, 0, 0], &["a", "b"]);
        let r = rank_by_mean_activation(&acts, &t, "a", &[0]).unwrap();
        assert_eq!(r[0].mean_activation, 2.0);
        assert!(rank_by_mean_activation(&acts, &t, "a", &[]).unwrap().is_empty());
    }

    #[test]
    fn ties_rank_lower_index_first() {
        let acts = matrix(3, &[vec![0.0, 1.0, 1.0]]);
        let t = table(&[0], &["a", "b"]);
        let r = rank_by_mean_activation(&acts, &t, "a", &[2, 1]).unwrap();
        assert_eq!(r.iter().map(|x| x.neuron).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn all_effective_mode_unions_specific_sets() {
        // Group a: rows 0,1 fire {1,2}; group b: rows 2,3 fire {2,3}.
        let acts = matrix(
            4,
            &[
                vec![0.0, 1.0, 1.0, 0.0],
                vec![0.0, 2.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0, 3.0],
                vec![0.0, 0.0, 1.0, 1.0],
            ],
        );
        let t = table(&[0, 0, 1, 1], &["a", "b"]);
        let r = build_report(&acts, &t, 1.0, ProbeMode::AllEffective).unwrap();
        assert_eq!(r.bias_set, vec![1, 3]);
        let r = build_report(&acts, &t, 1.0, ProbeMode::TopOne).unwrap();
        assert_eq!(r.bias_set, vec![1, 3]);
        assert_eq!(r.groups[0].top_samples[0].id, "s1");
    }

    #[test]
    fn identical_groups_give_empty_bias_set_with_warnings() {
        let acts = matrix(2, &[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let t = table(&[0, 1], &["a", "b"]);
        let r = build_report(&acts, &t, 0.9, ProbeMode::TopOne).unwrap();
        assert!(r.bias_set.is_empty());
        assert_eq!(r.warnings.len(), 2);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("top-1".parse::<ProbeMode>().unwrap(), ProbeMode::TopOne);
        assert_eq!("all-effective".parse::<ProbeMode>().unwrap(), ProbeMode::AllEffective);
        assert_eq!(serde_json::to_string(&ProbeMode::TopOne).unwrap(), "\"top-1\"");
        assert_eq!(serde_json::to_string(&ProbeMode::AllEffective).unwrap(), "\"all-effective\"");
    }
}
