//! Training objective: Matryoshka reconstruction, L1 sparsity and the
//! dead-latent auxiliary term, with analytic gradients.
//!
//! Gradients treat the top-k selection and the recruited dead latents as
//! constants (straight-through on the selected indices). The auxiliary
//! residual is differentiated through as well, so the gradient is exact for
//! the frozen-mask objective.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::{decode, encode, prefix_decode, top_k_positive, SaeParams};

use super::DeadLatentTracker;

/// Samples per gradient chunk. Chunks are reduced in a fixed order so the
/// result does not depend on the number of worker threads.
const CHUNK: usize = 64;

/// Loss components, each averaged over the batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub recon: f64,
    pub l1: f64,
    pub aux: f64,
    pub total: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.recon += o.recon;
        self.l1 += o.l1;
        self.aux += o.aux;
        self.total += o.total;
    }

    fn scale(&mut self, s: f64) {
        self.recon *= s;
        self.l1 *= s;
        self.aux *= s;
        self.total *= s;
    }

    pub fn is_finite(&self) -> bool {
        self.recon.is_finite() && self.l1.is_finite() && self.aux.is_finite() && self.total.is_finite()
    }
}

/// Frozen selection for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMask {
    /// Top-k latents, increasing.
    pub selected: Vec<usize>,
    /// Recruited dead latents, increasing.
    pub aux: Vec<usize>,
}

/// Frozen selection for a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchMask {
    pub samples: Vec<SampleMask>,
    /// False when no latent is dead; the auxiliary term is then zero.
    pub aux_active: bool,
}

/// Loss hyper-parameters needed by the objective.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub k: usize,
    pub l1_weight: f64,
    pub aux_weight: f64,
    pub aux_k: usize,
}

/// Gradient of the objective, same shapes as [`SaeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_enc: Array2<f64>,
    pub w_dec: Array2<f64>,
    pub b1: Array1<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    pub fn zeros(d: usize, omega: usize) -> Self {
        Self {
            w_enc: Array2::zeros((d, omega)),
            w_dec: Array2::zeros((omega, d)),
            b1: Array1::zeros(d),
            b2: Array1::zeros(d),
        }
    }

    fn add(&mut self, o: &Gradients) {
        self.w_enc += &o.w_enc;
        self.w_dec += &o.w_dec;
        self.b1 += &o.b1;
        self.b2 += &o.b2;
    }

    fn scale(&mut self, s: f64) {
        self.w_enc *= s;
        self.w_dec *= s;
        self.b1 *= s;
        self.b2 *= s;
    }
}

fn check_batch(batch: &Array2<f64>, params: &SaeParams) -> Result<()> {
    if batch.nrows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    if batch.ncols() != params.d() {
        return Err(Error::Shape {
            expected: params.d(),
            actual: batch.ncols(),
        });
    }
    Ok(())
}

fn row_vec(r: ArrayView1<'_, f64>) -> Vec<f64> {
    r.iter().copied().collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean over the batch of `sum_{m in M} ||v - prefix_decode(encode(v), m)||^2`.
pub fn matryoshka_recon_loss(batch: &Array2<f64>, params: &SaeParams, k: usize) -> Result<f64> {
    check_batch(batch, params)?;
    let mut total = 0.0;
    for row in batch.outer_iter() {
        let v = row_vec(row);
        let z = encode(&v, params, k)?;
        for &m in &params.prefix_schedule {
            total += sq_dist(&v, &prefix_decode(&z, params, m)?);
        }
    }
    Ok(total / batch.nrows() as f64)
}

/// `l1_weight` times the batch mean of the summed kept activations.
pub fn sparsity_penalty(batch: &Array2<f64>, params: &SaeParams, k: usize, l1_weight: f64) -> Result<f64> {
    check_batch(batch, params)?;
    if l1_weight == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for row in batch.outer_iter() {
        total += encode(&row_vec(row), params, k)?.l1();
    }
    Ok(l1_weight * total / batch.nrows() as f64)
}

/// Dead latents recruited for one sample: the `aux_k` largest positive
/// pre-activations among dead latents.
pub(crate) fn recruit_dead(pre: &[f64], dead: &[bool], aux_k: usize) -> Vec<usize> {
    let masked: Vec<f64> = pre
        .iter()
        .zip(dead)
        .map(|(&p, &is_dead)| if is_dead { p } else { 0.0 })
        .collect();
    top_k_positive(&masked, aux_k)
}

/// `aux_weight` times the batch mean of `||e - e_hat||^2`, where `e` is the
/// reconstruction residual and `e_hat` decodes (without `b2`) the top
/// `aux_k` dead latents. Zero when no latent is dead.
pub fn aux_loss(
    batch: &Array2<f64>,
    params: &SaeParams,
    k: usize,
    tracker: &DeadLatentTracker,
    aux_k: usize,
    aux_weight: f64,
) -> Result<f64> {
    check_batch(batch, params)?;
    if tracker.len() != params.omega() {
        return Err(Error::Shape {
            expected: params.omega(),
            actual: tracker.len(),
        });
    }
    let dead = tracker.dead_mask();
    if aux_weight == 0.0 || !dead.iter().any(|&x| x) {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for row in batch.outer_iter() {
        let v = row_vec(row);
        let recon = decode(&encode(&v, params, k)?, params)?;
        let pre = params.pre_activations(&v)?;
        let mut e_hat = vec![0.0; params.d()];
        for j in recruit_dead(&pre, &dead, aux_k) {
            params.add_decoder_row(j, pre[j], &mut e_hat);
        }
        let e: Vec<f64> = v.iter().zip(&recon).map(|(a, b)| a - b).collect();
        total += sq_dist(&e, &e_hat);
    }
    Ok(aux_weight * total / batch.nrows() as f64)
}

/// Computes the frozen selection for every sample of the batch.
pub fn compute_masks(batch: &Array2<f64>, params: &SaeParams, obj: &Objective, dead: &[bool]) -> Result<BatchMask> {
    check_batch(batch, params)?;
    let aux_active = obj.aux_weight > 0.0 && dead.iter().any(|&x| x);
    let samples = (0..batch.nrows())
        .into_par_iter()
        .map(|i| {
            let v = row_vec(batch.row(i));
            let pre = params.pre_activations(&v)?;
            let selected = top_k_positive(&pre, obj.k);
            let aux = if aux_active {
                recruit_dead(&pre, dead, obj.aux_k)
            } else {
                Vec::new()
            };
            Ok(SampleMask { selected, aux })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchMask { samples, aux_active })
}

fn column_dot(params: &SaeParams, j: usize, u: &[f64]) -> f64 {
    params.w_enc.column(j).iter().zip(u).map(|(w, x)| w * x).sum()
}

/// Loss (and optionally gradient, unscaled sum) of a single sample under a
/// frozen mask.
fn sample_objective(
    params: &SaeParams,
    v: &[f64],
    mask: &SampleMask,
    aux_active: bool,
    obj: &Objective,
    grad: Option<&mut Gradients>,
) -> LossParts {
    let d = params.d();
    let schedule = &params.prefix_schedule;
    let u: Vec<f64> = v.iter().zip(params.b1.iter()).map(|(a, b)| a - b).collect();
    let z: Vec<f64> = mask.selected.iter().map(|&j| column_dot(params, j, &u)).collect();
    let a: Vec<f64> = mask.aux.iter().map(|&j| column_dot(params, j, &u)).collect();

    // Nested prefix reconstructions; `errs[t]` is r_{M[t]} - v.
    let mut acc = params.b2.to_vec();
    let mut errs: Vec<Vec<f64>> = Vec::with_capacity(schedule.len());
    let mut cursor = 0;
    let mut recon = 0.0;
    for &m in schedule {
        while cursor < mask.selected.len() && mask.selected[cursor] < m {
            params.add_decoder_row(mask.selected[cursor], z[cursor], &mut acc);
            cursor += 1;
        }
        let err: Vec<f64> = acc.iter().zip(v).map(|(r, x)| r - x).collect();
        recon += err.iter().map(|x| x * x).sum::<f64>();
        errs.push(err);
    }

    // q = e - e_hat with e = v - v_hat.
    let (aux, q) = if aux_active {
        let mut q: Vec<f64> = v.iter().zip(&acc).map(|(x, r)| x - r).collect();
        for (&j, &aj) in mask.aux.iter().zip(&a) {
            params.add_decoder_row(j, -aj, &mut q);
        }
        (obj.aux_weight * q.iter().map(|x| x * x).sum::<f64>(), q)
    } else {
        (0.0, vec![0.0; d])
    };
    let l1 = obj.l1_weight * z.iter().sum::<f64>();
    let parts = LossParts {
        recon,
        l1,
        aux,
        total: recon + l1 + aux,
    };

    let Some(g) = grad else {
        return parts;
    };

    // Suffix sums of 2 * err over the schedule: entry t covers M[t..].
    let mut suffix = vec![vec![0.0; d]; schedule.len() + 1];
    for t in (0..schedule.len()).rev() {
        for c in 0..d {
            suffix[t][c] = suffix[t + 1][c] + 2.0 * errs[t][c];
        }
    }
    let two_beta = 2.0 * obj.aux_weight;
    for c in 0..d {
        g.b2[c] += suffix[0][c] - two_beta * q[c];
    }

    let mut pre_grads: Vec<(usize, f64)> = Vec::with_capacity(z.len() + a.len());
    let mut t = 0;
    for (&j, &zj) in mask.selected.iter().zip(&z) {
        while schedule[t] <= j {
            t += 1;
        }
        // Upstream gradient on the decoded row for latent j.
        let dec = params.w_dec.row(j);
        let mut dz = obj.l1_weight;
        let mut gdec = g.w_dec.row_mut(j);
        for c in 0..d {
            let up = suffix[t][c] - two_beta * q[c];
            dz += up * dec[c];
            gdec[c] += zj * up;
        }
        pre_grads.push((j, dz));
    }
    if aux_active {
        for (&j, &aj) in mask.aux.iter().zip(&a) {
            let dec = params.w_dec.row(j);
            let mut da = 0.0;
            let mut gdec = g.w_dec.row_mut(j);
            for c in 0..d {
                da -= two_beta * q[c] * dec[c];
                gdec[c] -= two_beta * aj * q[c];
            }
            pre_grads.push((j, da));
        }
    }
    for (j, gp) in pre_grads {
        for i in 0..d {
            g.w_enc[[i, j]] += gp * u[i];
            g.b1[i] -= gp * params.w_enc[[i, j]];
        }
    }
    parts
}

/// Batch-mean objective under a frozen mask, without gradients.
pub fn masked_loss(params: &SaeParams, batch: &Array2<f64>, mask: &BatchMask, obj: &Objective) -> Result<LossParts> {
    check_batch(batch, params)?;
    let mut parts = LossParts::default();
    for (row, m) in batch.outer_iter().zip(&mask.samples) {
        let v = row_vec(row);
        parts.add(&sample_objective(params, &v, m, mask.aux_active, obj, None));
    }
    parts.scale(1.0 / batch.nrows() as f64);
    Ok(parts)
}

/// Batch-mean objective and its gradient under a frozen mask.
pub fn masked_loss_and_grad(
    params: &SaeParams,
    batch: &Array2<f64>,
    mask: &BatchMask,
    obj: &Objective,
) -> Result<(LossParts, Gradients)> {
    check_batch(batch, params)?;
    if mask.samples.len() != batch.nrows() {
        return Err(Error::Shape {
            expected: batch.nrows(),
            actual: mask.samples.len(),
        });
    }
    let (d, omega) = (params.d(), params.omega());
    let n = batch.nrows();
    let chunks: Vec<(LossParts, Gradients)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut parts = LossParts::default();
            let mut grads = Gradients::zeros(d, omega);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let v = row_vec(batch.row(i));
                let p = sample_objective(params, &v, &mask.samples[i], mask.aux_active, obj, Some(&mut grads));
                parts.add(&p);
            }
            (parts, grads)
        })
        .collect();
    let mut parts = LossParts::default();
    let mut grads = Gradients::zeros(d, omega);
    for (p, g) in &chunks {
        parts.add(p);
        grads.add(g);
    }
    let s = 1.0 / n as f64;
    parts.scale(s);
    grads.scale(s);
    Ok((parts, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_params(w_enc: f64, w_dec: f64) -> SaeParams {
        SaeParams::new(
            array![[w_enc]],
            array![[w_dec]],
            array![0.0],
            array![0.0],
            vec![1],
        )
        .unwrap()
    }

    #[test]
    fn hand_toy_recon() {
        let batch = array![[2.0]];
        assert_eq!(matryoshka_recon_loss(&batch, &scalar_params(1.0, 1.0), 1).unwrap(), 0.0);
        assert_eq!(matryoshka_recon_loss(&batch, &scalar_params(1.0, 0.5), 1).unwrap(), 1.0);
    }

    #[test]
    fn loss_sums_over_prefixes() {
        // Latent 1 never fires, so both prefixes reconstruct identically and
        // the two-prefix loss is twice the single-prefix one.
        let mut p = SaeParams::new(
            array![[1.0, -1.0]],
            array![[0.5], [0.0]],
            array![0.0],
            array![0.0],
            vec![2],
        )
        .unwrap();
        let batch = array![[2.0]];
        let single = matryoshka_recon_loss(&batch, &p, 1).unwrap();
        assert_eq!(single, 1.0);
        p.prefix_schedule = vec![1, 2];
        assert_eq!(matryoshka_recon_loss(&batch, &p, 1).unwrap(), 2.0 * single);
    }

    #[test]
    fn empty_batch_rejected() {
        let batch = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            matryoshka_recon_loss(&batch, &scalar_params(1.0, 1.0), 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn sparsity_penalty_cases() {
        let p = scalar_params(1.0, 1.0);
        assert_eq!(sparsity_penalty(&array![[3.0]], &p, 1, 0.0).unwrap(), 0.0);
        assert_eq!(sparsity_penalty(&array![[3.0]], &p, 1, 2.0).unwrap(), 6.0);
        assert_eq!(sparsity_penalty(&array![[-3.0]], &p, 1, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn aux_loss_cases() {
        // d = 1, omega = 2. Latent 0 reconstructs half the input, latent 1 is dead.
        let p = SaeParams::new(
            array![[1.0, 1.0]],
            array![[0.5], [0.5]],
            array![0.0],
            array![0.0],
            vec![2],
        )
        .unwrap();
        let batch = array![[2.0]];
        let mut tracker = DeadLatentTracker::new(2, 1);
        assert_eq!(aux_loss(&batch, &p, 1, &tracker, 1, 1.0).unwrap(), 0.0);
        tracker.record(&[true, false]);
        assert!(tracker.is_dead(1));
        // e = 2 - 1 = 1, e_hat = 0.5 * 2 = 1 -> exact fit.
        assert_eq!(aux_loss(&batch, &p, 1, &tracker, 1, 1.0).unwrap(), 0.0);
        assert_eq!(aux_loss(&batch, &p, 1, &tracker, 1, 0.0).unwrap(), 0.0);
        // Dead decoder at 0.25: e_hat = 0.5, (1 - 0.5)^2 = 0.25.
        let mut p2 = p.clone();
        p2.w_dec[[1, 0]] = 0.25;
        let l = aux_loss(&batch, &p2, 1, &tracker, 1, 1.0).unwrap();
        assert!((l - 0.25).abs() < 1e-15);
    }

    #[test]
    fn fused_loss_matches_reference_functions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (d, omega) = (3, 8);
        let p = SaeParams::new(
            Array2::from_shape_fn((d, omega), |_| rng.gen_range(-1.0..1.0)),
            Array2::from_shape_fn((omega, d), |_| rng.gen_range(-1.0..1.0)),
            Array1::from_shape_fn(d, |_| rng.gen_range(-0.2..0.2)),
            Array1::from_shape_fn(d, |_| rng.gen_range(-0.2..0.2)),
            vec![2, 4, 8],
        )
        .unwrap();
        let batch = Array2::from_shape_fn((5, d), |_| rng.gen_range(-1.0..1.0));
        let mut tracker = DeadLatentTracker::new(omega, 1);
        tracker.record(&[true, true, false, true, false, true, false, false]);
        let obj = Objective {
            k: 3,
            l1_weight: 0.1,
            aux_weight: 0.03,
            aux_k: 2,
        };
        let mask = compute_masks(&batch, &p, &obj, &tracker.dead_mask()).unwrap();
        let fused = masked_loss(&p, &batch, &mask, &obj).unwrap();
        let recon = matryoshka_recon_loss(&batch, &p, 3).unwrap();
        let l1 = sparsity_penalty(&batch, &p, 3, 0.1).unwrap();
        let aux = aux_loss(&batch, &p, 3, &tracker, 2, 0.03).unwrap();
        assert!((fused.recon - recon).abs() < 1e-12);
        assert!((fused.l1 - l1).abs() < 1e-12);
        assert!((fused.aux - aux).abs() < 1e-12);
        let (with_grad, _) = masked_loss_and_grad(&p, &batch, &mask, &obj).unwrap();
        assert!((with_grad.total - fused.total).abs() < 1e-12);
    }
}
