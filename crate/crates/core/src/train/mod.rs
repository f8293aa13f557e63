//! SAE optimization: initialization, batch sampling, dead-latent tracking and
//! the training loop.

mod adam;
mod config;
mod loss;

pub use adam::Adam;
pub use config::{prefix_schedule, TrainConfig, DEFAULT_GROUP_FRACTIONS};
pub use loss::{
    aux_loss, compute_masks, masked_loss, masked_loss_and_grad, matryoshka_recon_loss, sparsity_penalty,
    BatchMask, Gradients, LossParts, Objective, SampleMask,
};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::SaeParams;
use crate::store::EmbeddingDataset;

/// Per-latent count of consecutive steps without firing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadLatentTracker {
    steps_since_fire: Vec<usize>,
    dead_after_steps: usize,
}

impl DeadLatentTracker {
    pub fn new(omega: usize, dead_after_steps: usize) -> Self {
        Self {
            steps_since_fire: vec![0; omega],
            dead_after_steps,
        }
    }

    pub fn len(&self) -> usize {
        self.steps_since_fire.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps_since_fire.is_empty()
    }

    pub fn steps_since_fire(&self) -> &[usize] {
        &self.steps_since_fire
    }

    pub fn is_dead(&self, j: usize) -> bool {
        self.steps_since_fire[j] >= self.dead_after_steps
    }

    pub fn dead_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|j| self.is_dead(j)).collect()
    }

    pub fn dead_count(&self) -> usize {
        (0..self.len()).filter(|&j| self.is_dead(j)).count()
    }

    /// Resets latents that fired in this step and ages the rest.
    pub fn record(&mut self, fired: &[bool]) {
        for (c, &f) in self.steps_since_fire.iter_mut().zip(fired) {
            *c = if f { 0 } else { c.saturating_add(1) };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub recon: f64,
    pub l1: f64,
    pub aux: f64,
    pub total: f64,
    pub dead_latents: usize,
    pub learning_rate: f64,
    pub decoder_renormalized: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// Newline-delimited JSON, one record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn first(&self) -> Option<&TrainRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

/// Seeded initialization: unit-norm random decoder rows, tied encoder,
/// `b1` at the sample mean and `b2 = 0`.
pub fn init_params(d: usize, config: &TrainConfig, sample: &Array2<f64>) -> Result<SaeParams> {
    if sample.nrows() == 0 {
        return Err(Error::EmptyDataset("initialization sample is empty".into()));
    }
    if sample.ncols() != d {
        return Err(Error::Shape {
            expected: d,
            actual: sample.ncols(),
        });
    }
    config.validate()?;
    let omega = config.dictionary_size(d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w_dec = Array2::<f64>::zeros((omega, d));
    for mut row in w_dec.outer_iter_mut() {
        loop {
            row.mapv_inplace(|_| rng.sample(StandardNormal));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row /= norm;
                break;
            }
        }
    }
    let w_enc = w_dec.t().to_owned();
    let b1 = sample.mean_axis(Axis(0)).expect("non-empty sample");
    let b2 = Array1::zeros(d);
    SaeParams::new(w_enc, w_dec, b1, b2, prefix_schedule(omega, &config.group_fractions))
}

/// Output of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub loss: LossParts,
    pub dead_latents: usize,
    pub learning_rate: f64,
}

impl Objective {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            k: cfg.k,
            l1_weight: cfg.l1_weight,
            aux_weight: cfg.aux_weight,
            aux_k: cfg.aux_k,
        }
    }
}

fn renormalize_rows(w: &mut Array2<f64>) {
    for mut row in w.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// One optimizer step on `batch`.
///
/// The top-k selection and recruited dead latents are frozen for the
/// gradient. The tracker is updated from this batch's firings even when the
/// learning rate is zero.
pub fn train_step(
    params: &mut SaeParams,
    optimizer: &mut Adam,
    batch: &Array2<f64>,
    config: &TrainConfig,
    tracker: &mut DeadLatentTracker,
    step: usize,
) -> Result<StepOutput> {
    let obj = Objective::from_config(config);
    let mask = compute_masks(batch, params, &obj, &tracker.dead_mask())?;
    let (loss, grads) = masked_loss_and_grad(params, batch, &mask, &obj)?;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step,
            what: "loss".into(),
        });
    }
    let lr = config.learning_rate_at(step);
    if lr > 0.0 {
        optimizer.begin_step();
        let blocks: [(&mut [f64], &[f64]); 4] = [
            (params.w_enc.as_slice_mut().unwrap(), grads.w_enc.as_slice().unwrap()),
            (params.w_dec.as_slice_mut().unwrap(), grads.w_dec.as_slice().unwrap()),
            (params.b1.as_slice_mut().unwrap(), grads.b1.as_slice().unwrap()),
            (params.b2.as_slice_mut().unwrap(), grads.b2.as_slice().unwrap()),
        ];
        for (i, (p, g)) in blocks.into_iter().enumerate() {
            optimizer.update(i, p, g, lr);
        }
        if config.renormalize_decoder {
            renormalize_rows(&mut params.w_dec);
        }
        let finite = params.w_enc.iter().chain(params.w_dec.iter()).all(|x| x.is_finite())
            && params.b1.iter().chain(params.b2.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Divergence {
                step,
                what: "parameters".into(),
            });
        }
    }
    let mut fired = vec![false; params.omega()];
    for s in &mask.samples {
        for &j in &s.selected {
            fired[j] = true;
        }
    }
    tracker.record(&fired);
    Ok(StepOutput {
        loss,
        dead_latents: tracker.dead_count(),
        learning_rate: lr,
    })
}

/// Seeded batch index sampler.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    n: usize,
    batch_size: usize,
    with_replacement: bool,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, with_replacement: bool, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Argument("sampler needs n >= 1 and batch_size >= 1".into()));
        }
        if n < batch_size && !with_replacement {
            return Err(Error::Argument(format!(
                "n = {n} < batch_size = {batch_size} without replacement"
            )));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            batch_size,
            with_replacement,
            order: (0..n).collect(),
            cursor: n,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.with_replacement {
            return (0..self.batch_size).map(|_| self.rng.gen_range(0..self.n)).collect();
        }
        if self.cursor + self.batch_size > self.n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        out
    }
}

fn gather(ds: &EmbeddingDataset, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), ds.d()), |(r, c)| ds.rows()[[idx[r], c]] as f64)
}

fn dataset_f64(ds: &EmbeddingDataset) -> Array2<f64> {
    ds.rows().mapv(|x| x as f64)
}

/// Trains an SAE on `dataset`. Deterministic given `(dataset, config)`.
pub fn train(dataset: &EmbeddingDataset, config: &TrainConfig) -> Result<(SaeParams, TrainLog)> {
    train_with_observer(dataset, config, |_, _| Ok(()))
}

/// Like [`train`], calling `observer(step, params)` every
/// `config.checkpoint_every` steps (after the update of that step).
pub fn train_with_observer<F>(dataset: &EmbeddingDataset, config: &TrainConfig, mut observer: F) -> Result<(SaeParams, TrainLog)>
where
    F: FnMut(usize, &SaeParams) -> Result<()>,
{
    config.validate_for(dataset.d(), dataset.n())?;
    let mut params = init_params(dataset.d(), config, &dataset_f64(dataset))?;
    let omega = params.omega();
    let mut optimizer = Adam::new(&[params.w_enc.len(), params.w_dec.len(), params.d(), params.d()]);
    let mut tracker = DeadLatentTracker::new(omega, config.dead_after_steps);
    let mut sampler = BatchSampler::new(
        dataset.n(),
        config.batch_size,
        config.sample_with_replacement,
        config.seed.wrapping_add(1),
    )?;
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let batch = gather(dataset, &sampler.next_batch());
        let out = train_step(&mut params, &mut optimizer, &batch, config, &mut tracker, step)?;
        if step % config.log_every == 0 || step + 1 == config.steps {
            log.records.push(TrainRecord {
                step,
                recon: out.loss.recon,
                l1: out.loss.l1,
                aux: out.loss.aux,
                total: out.loss.total,
                dead_latents: out.dead_latents,
                learning_rate: out.learning_rate,
                decoder_renormalized: config.renormalize_decoder,
            });
        }
        if let Some(every) = config.checkpoint_every {
            if (step + 1) % every == 0 {
                observer(step, &params)?;
            }
        }
    }
    Ok((params, log))
}
