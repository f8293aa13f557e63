mod common;

use common::*;
use debiaslens_core::train::{compute_masks, masked_loss, masked_loss_and_grad, Objective};
use debiaslens_core::SaeParams;
use ndarray::Array2;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn entries(p: &mut SaeParams, block: usize) -> &mut [f64] {
    match block {
        0 => p.w_enc.as_slice_mut().unwrap(),
        1 => p.w_dec.as_slice_mut().unwrap(),
        2 => p.b1.as_slice_mut().unwrap(),
        _ => p.b2.as_slice_mut().unwrap(),
    }
}

fn check(seed: u64, obj: Objective, dead: &[bool]) -> f64 {
    let mut r = rng(seed);
    let params = random_params(&mut r, 2, 4);
    let batch: Array2<f64> = random_batch(&mut r, 3, 2);
    let mask = compute_masks(&batch, &params, &obj, dead).unwrap();
    let (_, g) = masked_loss_and_grad(&params, &batch, &mask, &obj).unwrap();
    let analytic = [
        g.w_enc.as_slice().unwrap().to_vec(),
        g.w_dec.as_slice().unwrap().to_vec(),
        g.b1.to_vec(),
        g.b2.to_vec(),
    ];
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (block, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let mut plus = params.clone();
            entries(&mut plus, block)[i] += eps;
            let mut minus = params.clone();
            entries(&mut minus, block)[i] -= eps;
            let lp = masked_loss(&plus, &batch, &mask, &obj).unwrap().total;
            let lm = masked_loss(&minus, &batch, &mask, &obj).unwrap().total;
            worst = worst.max(rel_err(a, (lp - lm) / (2.0 * eps)));
        }
    }
    worst
}

#[test]
fn reconstruction_only() {
    let obj = Objective {
        k: 2,
        l1_weight: 0.0,
        aux_weight: 0.0,
        aux_k: 2,
    };
    for seed in 0..20 {
        let e = check(seed, obj, &[false; 4]);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn all_terms() {
    let obj = Objective {
        k: 2,
        l1_weight: 0.05,
        aux_weight: 0.5,
        aux_k: 2,
    };
    for seed in 0..20 {
        let e = check(seed, obj, &[false, true, false, true]);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}
