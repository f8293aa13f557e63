use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GROUP_FRACTIONS: [f64; 4] = [0.0625, 0.125, 0.25, 0.5625];

/// Hyper-parameters for one SAE training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub expansion_factor: usize,
    pub k: usize,
    /// Weight of the L1 penalty on the kept activations.
    pub l1_weight: f64,
    /// Weight of the dead-latent auxiliary loss.
    pub aux_weight: f64,
    /// Number of dead latents recruited per sample by the auxiliary loss.
    pub aux_k: usize,
    pub group_fractions: Vec<f64>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// First step of the linear decay to zero; `None` means `steps - 1`.
    pub lr_decay_start: Option<usize>,
    /// A latent is dead after this many consecutive steps without firing.
    pub dead_after_steps: usize,
    pub seed: u64,
    pub renormalize_decoder: bool,
    /// Draw batches with replacement instead of shuffled epochs.
    pub sample_with_replacement: bool,
    pub log_every: usize,
    /// Invoke the checkpoint observer every this many steps.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            expansion_factor: 8,
            k: 20,
            l1_weight: 0.0,
            aux_weight: 0.03,
            aux_k: 256,
            group_fractions: DEFAULT_GROUP_FRACTIONS.to_vec(),
            steps: 110_000,
            batch_size: 4096,
            learning_rate: 1e-4,
            lr_decay_start: None,
            dead_after_steps: 1000,
            seed: 0,
            renormalize_decoder: true,
            sample_with_replacement: false,
            log_every: 100,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn decay_start(&self) -> usize {
        self.lr_decay_start.unwrap_or(self.steps.saturating_sub(1))
    }

    /// Learning rate for `step`: constant, then linear decay to zero from
    /// `decay_start` to `steps`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let start = self.decay_start();
        if step < start {
            self.learning_rate
        } else {
            let span = (self.steps - start) as f64;
            self.learning_rate * (self.steps.saturating_sub(step)) as f64 / span
        }
    }

    pub fn dictionary_size(&self, d: usize) -> usize {
        self.expansion_factor * d
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.expansion_factor == 0 {
            return bad("expansion_factor must be positive".into());
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if !(self.l1_weight >= 0.0 && self.l1_weight.is_finite()) {
            return bad(format!("l1_weight {} must be >= 0", self.l1_weight));
        }
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            return bad(format!("aux_weight {} must be >= 0", self.aux_weight));
        }
        if self.aux_k == 0 {
            return bad("aux_k must be positive".into());
        }
        if self.group_fractions.is_empty() || self.group_fractions.iter().any(|&f| !(f > 0.0)) {
            return bad(format!(
                "group_fractions {:?} must be non-empty and positive",
                self.group_fractions
            ));
        }
        let sum: f64 = self.group_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("group_fractions sum to {sum}, expected 1"));
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.decay_start() >= self.steps {
            return bad(format!(
                "lr_decay_start {} must be < steps {}",
                self.decay_start(),
                self.steps
            ));
        }
        if self.dead_after_steps == 0 {
            return bad("dead_after_steps must be positive".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive".into());
        }
        Ok(())
    }

    /// Checks that the configuration is usable for inputs of dimension `d`
    /// and a dataset of `n` rows.
    pub fn validate_for(&self, d: usize, n: usize) -> Result<()> {
        self.validate()?;
        let omega = self.dictionary_size(d);
        if self.k > omega {
            return Err(Error::Validation(format!("k = {} exceeds dictionary size {omega}", self.k)));
        }
        if n < self.batch_size && !self.sample_with_replacement {
            return Err(Error::Validation(format!(
                "dataset has {n} rows, fewer than batch_size {}; enable sample_with_replacement",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Cumulative prefix depths from group fractions: `ceil(f * omega)` per
/// group, clamped so the schedule is strictly increasing and ends at `omega`.
pub fn prefix_schedule(omega: usize, fractions: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(fractions.len());
    let mut acc = 0usize;
    for f in fractions {
        acc += (f * omega as f64).ceil() as usize;
        let m = acc.min(omega);
        if out.last().is_none_or(|&last| m > last) {
            out.push(m);
        }
    }
    if out.last() != Some(&omega) {
        out.push(omega);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_at_omega_eight() {
        // ceil(0.5), ceil(1), ceil(2), ceil(4.5) = 1, 1, 2, 5 -> 1, 2, 4, 9 -> clamp.
        assert_eq!(prefix_schedule(8, &DEFAULT_GROUP_FRACTIONS), vec![1, 2, 4, 8]);
    }

    #[test]
    fn schedule_at_omega_256() {
        assert_eq!(prefix_schedule(256, &DEFAULT_GROUP_FRACTIONS), vec![16, 48, 112, 256]);
    }

    #[test]
    fn schedule_dedupes_when_small() {
        assert_eq!(prefix_schedule(2, &DEFAULT_GROUP_FRACTIONS), vec![1, 2]);
        assert_eq!(prefix_schedule(1, &DEFAULT_GROUP_FRACTIONS), vec![1]);
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let cfg = TrainConfig {
            group_fractions: vec![0.5, 0.4],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn decay_defaults_to_last_step() {
        let cfg = TrainConfig {
            steps: 10,
            learning_rate: 1.0,
            ..Default::default()
        };
        assert_eq!(cfg.decay_start(), 9);
        assert_eq!(cfg.learning_rate_at(8), 1.0);
        assert_eq!(cfg.learning_rate_at(9), 1.0);

        let cfg = TrainConfig {
            steps: 10,
            learning_rate: 1.0,
            lr_decay_start: Some(5),
            ..Default::default()
        };
        assert_eq!(cfg.learning_rate_at(5), 1.0);
        assert!((cfg.learning_rate_at(7) - 0.6).abs() < 1e-15);
        let bad = TrainConfig {
            lr_decay_start: Some(10),
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_defaults_fill_in() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"steps": 5, "lr_decay_start": 2}"#).unwrap();
        assert_eq!(cfg.steps, 5);
        assert_eq!(cfg.k, 20);
        assert_eq!(cfg.batch_size, 4096);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"stepz": 5}"#).is_err());
    }
}
