use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Hyperparameters and step counter of the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub mom1: Vec<Vec<f64>>,
    pub mom2: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, lr: f64) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::numel).collect();
        AdamState {
            hyper: AdamHyper {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
            },
            mom1: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            mom2: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.hyper.step
    }
}

/// One Adam update using each tensor's accumulated gradient; tensors without a
/// gradient are treated as having a zero gradient.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.mom1.len() {
        return Err(Error::Contract(format!(
            "{} tensors for optimizer state of {}",
            params.len(),
            state.mom1.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.numel() != state.mom1[i].len() {
            return Err(Error::Contract(format!(
                "tensor {i} has {} values, optimizer state {}",
                p.numel(),
                state.mom1[i].len()
            )));
        }
    }
    state.hyper.step += 1;
    let AdamHyper { lr, beta1, beta2, eps, step } = state.hyper;
    let bc1 = 1.0 - beta1.powf(step as f64);
    let bc2 = 1.0 - beta2.powf(step as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec);
        let (m1, m2) = (&mut state.mom1[i], &mut state.mom2[i]);
        for ((a, b), g) in m1.iter_mut().zip(m2.iter_mut()).zip(&grad) {
            *a = beta1 * *a + (1.0 - beta1) * g;
            *b = beta2 * *b + (1.0 - beta2) * g * g;
        }
        apply(p, m1, m2, lr, bc1, bc2, eps);
    }
    Ok(())
}

fn apply(p: &mut Tensor, m1: &[f64], m2: &[f64], lr: f64, bc1: f64, bc2: f64, eps: f64) {
    for ((w, a), b) in p.data_mut().iter_mut().zip(m1).zip(m2) {
        let m_hat = a / bc1;
        let v_hat = b / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
