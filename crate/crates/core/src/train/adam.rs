use serde::{Deserialize, Serialize};

/// Adam with bias correction, applied block by block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<Moments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    /// One moment buffer per parameter block, sized by `block_lens`.
    pub fn new(block_lens: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: block_lens
                .iter()
                .map(|&n| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Advances the shared step counter. Call once per optimizer step, before
    /// updating the blocks.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, block: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let mom = &mut self.moments[block];
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), mom.m.len());
        let t = self.t.max(1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(mom.m.iter_mut().zip(mom.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut adam = Adam::new(&[2]);
        let mut p = vec![1.0, 1.0];
        adam.begin_step();
        adam.update(0, &mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(&[1]);
        let mut x = vec![5.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 2.0)];
            adam.begin_step();
            adam.update(0, &mut x, &g, 0.05);
        }
        assert!((x[0] - 2.0).abs() < 1e-3, "{}", x[0]);
    }
}
