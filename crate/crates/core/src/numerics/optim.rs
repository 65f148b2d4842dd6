//! AdamW with decoupled weight decay and the linear warmup/decay schedule.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Optimizer constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    /// CRM training constants: β₁ 0.9, β₂ 0.98, ε 1e-6, decay 1e-2.
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-6,
            weight_decay: 1e-2,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..1.0).contains(&v);
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::invalid(format!(
                "betas ({}, {}) must lie in [0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid("epsilon must be > 0 and weight_decay >= 0"));
        }
        Ok(())
    }
}

/// Moment accumulators for a fixed, ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }
}

/// One AdamW update: bias-corrected moments, and decay applied as
/// `p -= lr * weight_decay * p` separately from the moment step.
pub fn adamw_step(
    params: &mut [&mut Matrix],
    grads: &[&Matrix],
    state: &mut AdamWState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adamw_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adamw_step",
                format!(
                    "slot {i}: param {:?}, grad {:?}, moments {:?}",
                    p.shape(),
                    g.shape(),
                    state.m[i].shape()
                ),
            ));
        }
    }

    state.step += 1;
    let AdamWConfig {
        beta1,
        beta2,
        epsilon,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let decay = lr * weight_decay;

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (((pj, &gj), mj), vj) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mj = beta1 * *mj + (1.0 - beta1) * gj;
            *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
            let m_hat = *mj / bc1;
            let v_hat = *vj / bc2;
            *pj -= decay * *pj;
            *pj -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Linear warmup to `peak_lr`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub total_steps: u64,
    pub warmup_ratio: f64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, total_steps: u64, warmup_ratio: f64) -> Result<Self> {
        if !(peak_lr >= 0.0) || !peak_lr.is_finite() {
            return Err(Error::invalid(format!("peak_lr {peak_lr} must be >= 0")));
        }
        if total_steps == 0 {
            return Err(Error::invalid("total_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&warmup_ratio) {
            return Err(Error::invalid(format!(
                "warmup_ratio {warmup_ratio} outside [0, 1]"
            )));
        }
        Ok(Self {
            peak_lr,
            total_steps,
            warmup_ratio,
        })
    }

    pub fn warmup_steps(&self) -> u64 {
        ((self.warmup_ratio * self.total_steps as f64).round() as u64).min(self.total_steps)
    }

    pub fn decay_steps(&self) -> u64 {
        self.total_steps - self.warmup_steps()
    }
}

pub fn lr_at_step(s: &LrSchedule, step: u64) -> Result<f64> {
    if step > s.total_steps {
        return Err(Error::invalid(format!(
            "step {step} beyond schedule length {}",
            s.total_steps
        )));
    }
    let warmup = s.warmup_steps();
    if step < warmup {
        return Ok(s.peak_lr * step as f64 / warmup as f64);
    }
    let decay = s.decay_steps();
    if decay == 0 {
        // warmup covers the whole run; the endpoint still lands on zero
        return Ok(if step == s.total_steps { 0.0 } else { s.peak_lr });
    }
    Ok(s.peak_lr * (s.total_steps - step) as f64 / decay as f64)
}
