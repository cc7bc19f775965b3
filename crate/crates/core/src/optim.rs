//! Adam with a step-decay learning-rate schedule.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct Adam<F> {
    config: AdamConfig,
    steps: i32,
    first: Vec<Array2<F>>,
    second: Vec<Array2<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One update of `params` (in leaf order) against `grads` of the same shapes.
    pub fn step(&mut self, params: Vec<&mut Array2<F>>, grads: &[Array2<F>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient counts differ");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let c = &self.config;
        let b1 = F::from_f64_lossy(c.beta1);
        let b2 = F::from_f64_lossy(c.beta2);
        let eps = F::from_f64_lossy(c.eps);
        let wd = F::from_f64_lossy(c.weight_decay);
        let lr = F::from_f64_lossy(lr);
        let correction1 = F::one() - b1.powi(self.steps);
        let correction2 = F::one() - b2.powi(self.steps);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + wd * *p;
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

/// Multiplies the base rate by `gamma` every `step_size` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLr {
    pub base_lr: f64,
    pub gamma: f64,
    pub step_size: usize,
}

impl StepLr {
    pub fn new(base_lr: f64) -> Self {
        StepLr {
            base_lr,
            gamma: 0.9,
            step_size: 20,
        }
    }

    /// Rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = epoch.saturating_sub(1) / self.step_size.max(1);
        self.base_lr * self.gamma.powi(decays as i32)
    }
}
