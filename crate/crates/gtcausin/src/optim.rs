//! Adam with a step-decay learning-rate schedule.
//!
//! The schedule counts in epochs while Adam's bias correction counts in
//! update steps, so the two are tracked separately.

use crate::error::{input_err, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Step decay: full rate until `decay_start`, then multiplied by `gamma`
/// once immediately and again every `decay_step_size` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub gamma: f64,
    pub decay_start: u64,
    pub decay_step_size: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, gamma: f64, decay_start: u64, decay_step_size: u64) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return input_err(format!(
                "base learning rate must be positive, got {base_lr}"
            ));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return input_err(format!("decay factor must be in (0, 1], got {gamma}"));
        }
        if decay_step_size == 0 {
            return input_err("decay step size must be positive");
        }
        Ok(Self {
            base_lr,
            gamma,
            decay_start,
            decay_step_size,
        })
    }

    pub fn lr_at(&self, epoch: u64) -> f64 {
        if epoch < self.decay_start {
            self.base_lr
        } else {
            let extra = (epoch - self.decay_start) / self.decay_step_size;
            self.base_lr * self.gamma.powi(1 + extra as i32)
        }
    }
}

/// Adam state: per-parameter moment estimates plus the update counter.
#[derive(Clone, Debug, Default)]
pub struct OptimState {
    step_count: u64,
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One Adam update over every parameter with a populated gradient,
    /// at the learning rate for `epoch`.
    pub fn adam_step(
        &mut self,
        store: &mut ParamStore,
        schedule: &LrSchedule,
        epoch: u64,
    ) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count;
        let lr = schedule.lr_at(epoch);
        let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
        for (name, entry) in store.iter_mut() {
            let Some(grad) = &entry.grad else { continue };
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            if m.shape() != grad.shape() {
                return input_err(format!(
                    "optimizer state for {name:?} has shape {:?}, gradient {:?}",
                    m.shape(),
                    grad.shape()
                ));
            }
            let val = entry.value.data_mut();
            let (md, vd, gd) = (m.data_mut(), v.data_mut(), grad.data());
            for i in 0..gd.len() {
                let g = gd[i];
                md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * g;
                vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                val[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}
