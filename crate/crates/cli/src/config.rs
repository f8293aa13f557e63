use std::fmt;
use std::path::{Path, PathBuf};

use debiaslens_core::metrics::{AliasTable, DesiredDistribution, DEFAULT_ALPHA_SIG};
use debiaslens_core::{ModulationConfig, ProbeMode, TrainConfig};
use serde::{Deserialize, Serialize};

/// A problem with the configuration or the arguments; exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub embeddings: Option<PathBuf>,
    pub labels: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Probe reports whose bias sets feed `debias`.
    pub reports: Vec<PathBuf>,
    pub gallery: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    /// Planted-bias spec for `synth` and `sweep`.
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub tau: f64,
    pub mode: ProbeMode,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            tau: 0.9,
            mode: ProbeMode::TopOne,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub k: usize,
    pub desired: DesiredDistribution,
    pub alpha_sig: f64,
    pub aliases: AliasTable,
    pub similarity_pairs: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            k: 100,
            desired: DesiredDistribution::uniform(),
            alpha_sig: DEFAULT_ALPHA_SIG,
            aliases: AliasTable::default(),
            similarity_pairs: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    pub expansion_factors: Vec<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            taus: vec![0.9],
            expansion_factors: vec![8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub queries_per_group: usize,
    pub bias_mix: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            queries_per_group: 50,
            bias_mix: 0.8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub train: TrainConfig,
    pub probe: ProbeSettings,
    pub modulation: ModulationConfig,
    pub metrics: MetricSettings,
    pub sweep: SweepSettings,
    pub synth: SynthSettings,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(0.0..=1.0).contains(&self.probe.tau) {
            return Err(config_error(format!("probe.tau {} outside [0, 1]", self.probe.tau)));
        }
        if !(0.0..=1.0).contains(&self.modulation.alpha) {
            return Err(config_error(format!("modulation.alpha {} outside [0, 1]", self.modulation.alpha)));
        }
        if self.metrics.k == 0 {
            return Err(config_error("metrics.k must be >= 1"));
        }
        if !(self.metrics.alpha_sig > 0.0 && self.metrics.alpha_sig < 1.0) {
            return Err(config_error(format!("metrics.alpha_sig {} outside (0, 1)", self.metrics.alpha_sig)));
        }
        if !(0.0..=1.0).contains(&self.synth.bias_mix) {
            return Err(config_error(format!("synth.bias_mix {} outside [0, 1]", self.synth.bias_mix)));
        }
        self.train
            .validate()
            .map_err(|e| config_error(format!("train: {e}")))?;
        Ok(())
    }
}

/// The path, or a config error naming what is missing.
pub fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| config_error(format!("no {what} path given")))?;
    exists(p, what)?;
    Ok(p)
}

pub fn exists(p: &Path, what: &str) -> anyhow::Result<()> {
    if !p.exists() {
        return Err(config_error(format!("{what} file not found: {}", p.display())));
    }
    Ok(())
}
