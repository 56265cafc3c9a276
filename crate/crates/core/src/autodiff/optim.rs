use serde::{Deserialize, Serialize};

use super::tensor::{Precision, Tensor};

/// `p ← p − lr·g` for every tensor that has a gradient.
pub fn sgd_step(params: &mut [&mut Tensor], lr: f64, precision: Precision) {
    for p in params.iter_mut() {
        let Some(g) = p.grad.take() else { continue };
        for (x, d) in p.data_mut().iter_mut().zip(&g) {
            *x = precision.round(*x - lr * d);
        }
        p.grad = Some(g);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter tensor, plus the step
/// counter used for bias correction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], cfg: &AdamConfig, precision: Precision) {
        assert_eq!(params.len(), self.m.len(), "adam state/parameter count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = p.grad.take() else { continue };
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *x = precision.round(*x - cfg.lr * mhat / (vhat.sqrt() + cfg.eps));
            }
            p.grad = Some(g);
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping happened).
pub fn clip_grad_norm(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let sq: f64 = params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum();
    let norm = sq.sqrt();
    if norm <= max_norm {
        return 1.0;
    }
    let factor = max_norm / norm;
    for p in params.iter_mut() {
        if let Some(g) = &mut p.grad {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }
    factor
}

pub fn grad_norm(params: &[&Tensor]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}
