//! First-order optimizers and the milestone learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new<P: AsRef<[f64]>>(params: &[P]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.as_ref().len()]).collect();
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.first.len(), "parameter count");
        assert_eq!(grads.len(), self.first.len(), "gradient count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Plain gradient descent.
pub fn sgd_step(params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        p.iter_mut().zip(g.iter()).for_each(|(p, g)| *p -= lr * g);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Piecewise-constant learning rate, multiplied by `decay` at each milestone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestoneSchedule {
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl MilestoneSchedule {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay {} must lie in (0, 1)",
                self.decay
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "milestones {:?} must be strictly increasing",
                self.milestones
            )));
        }
        if self.milestones.last().is_some_and(|&m| m >= epochs) {
            return Err(Error::InvalidConfig(format!(
                "milestones {:?} must precede epoch {epochs}",
                self.milestones
            )));
        }
        Ok(())
    }

    /// `lr · decay^(milestones ≤ epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.decay.powi(passed as i32)
    }
}
