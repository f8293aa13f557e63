#![allow(dead_code)]

use debiaslens_core::SaeParams;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gaussian(rng)).collect()
}

/// Random SAE with a two-level schedule ending at `omega`.
pub fn random_params(rng: &mut ChaCha8Rng, d: usize, omega: usize) -> SaeParams {
    let w_enc = Array2::from_shape_fn((d, omega), |_| gaussian(rng));
    let w_dec = Array2::from_shape_fn((omega, d), |_| gaussian(rng));
    let b1 = Array1::from_shape_fn(d, |_| 0.1 * gaussian(rng));
    let b2 = Array1::from_shape_fn(d, |_| 0.1 * gaussian(rng));
    let mid = (omega / 2).max(1);
    let schedule = if mid < omega { vec![mid, omega] } else { vec![omega] };
    SaeParams::new(w_enc, w_dec, b1, b2, schedule).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| gaussian(rng))
}

pub fn coin(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.gen_bool(p)
}
