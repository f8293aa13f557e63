//! Latent modulation: overwrite bias-set latents with `gamma`, decode, and
//! blend with the original feature by `alpha`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::{decode_signed, encode, SaeParams, SparseActivation};
use crate::store::EmbeddingDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationConfig {
    pub bias_set: Vec<usize>,
    /// Value written into every bias-set latent; negative values steer away.
    pub gamma: f64,
    /// Weight of the modulated reconstruction in the output blend.
    pub alpha: f64,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            bias_set: Vec::new(),
            gamma: 0.0,
            alpha: 0.6,
        }
    }
}

impl ModulationConfig {
    pub fn new(bias_set: impl IntoIterator<Item = usize>, gamma: f64, alpha: f64) -> Self {
        let set: BTreeSet<usize> = bias_set.into_iter().collect();
        Self {
            bias_set: set.into_iter().collect(),
            gamma,
            alpha,
        }
    }

    pub fn validate(&self, omega: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Argument(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !self.gamma.is_finite() {
            return Err(Error::Argument(format!("gamma {} is not finite", self.gamma)));
        }
        if let Some(&j) = self.bias_set.iter().find(|&&j| j >= omega) {
            return Err(Error::Range {
                what: "bias-set latent",
                value: j,
                lo: 0,
                hi: omega.saturating_sub(1),
            });
        }
        Ok(())
    }
}

/// Sparse latent after modulation. Unlike [`SparseActivation`] its values
/// may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedLatent {
    pub dim: usize,
    /// Increasing indices; absent indices are zero.
    pub entries: Vec<(usize, f64)>,
}

impl ModulatedLatent {
    pub fn get(&self, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |p| self.entries[p].1)
    }

    pub fn decode(&self, params: &SaeParams) -> Result<Vec<f64>> {
        if self.dim != params.omega() {
            return Err(Error::Shape {
                expected: params.omega(),
                actual: self.dim,
            });
        }
        Ok(decode_signed(&self.entries, params))
    }
}

/// Sets every bias-set latent to `gamma`, keeping all others.
pub fn modulate_latent(z: &SparseActivation, cfg: &ModulationConfig) -> Result<ModulatedLatent> {
    cfg.validate(z.dim())?;
    let bias: BTreeSet<usize> = cfg.bias_set.iter().copied().collect();
    let mut entries: Vec<(usize, f64)> = z
        .entries()
        .iter()
        .copied()
        .filter(|(j, _)| !bias.contains(j))
        .collect();
    if cfg.gamma != 0.0 {
        entries.extend(bias.iter().map(|&j| (j, cfg.gamma)));
        entries.sort_by_key(|e| e.0);
    }
    Ok(ModulatedLatent { dim: z.dim(), entries })
}

/// `alpha * decode(modulate(encode(v))) + (1 - alpha) * v`.
pub fn debias(v: &[f64], params: &SaeParams, cfg: &ModulationConfig, k: usize) -> Result<Vec<f64>> {
    cfg.validate(params.omega())?;
    let z = encode(v, params, k)?;
    if cfg.alpha == 0.0 {
        return Ok(v.to_vec());
    }
    let recon = modulate_latent(&z, cfg)?.decode(params)?;
    if cfg.alpha == 1.0 {
        return Ok(recon);
    }
    let a = cfg.alpha;
    Ok(recon.iter().zip(v).map(|(r, x)| a * r + (1.0 - a) * x).collect())
}

/// Row-wise [`debias`]; ids and row order are preserved.
pub fn debias_dataset(ds: &EmbeddingDataset, params: &SaeParams, cfg: &ModulationConfig, k: usize) -> Result<EmbeddingDataset> {
    if ds.d() != params.d() {
        return Err(Error::Shape {
            expected: params.d(),
            actual: ds.d(),
        });
    }
    cfg.validate(params.omega())?;
    if cfg.alpha == 0.0 {
        return Ok(ds.clone());
    }
    let rows = (0..ds.n())
        .into_par_iter()
        .map(|i| debias(&ds.row_f64(i), params, cfg, k))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingDataset::from_f64_rows(&rows, ds.ids().to_vec())
}
