//! Adam with bias correction, linear warmup, and global-norm clipping.

use std::collections::BTreeMap;

use log::warn;

use crate::numerics::{Gradients, ParamId};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moments per tensor and the count of applied steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: BTreeMap<ParamId, Vec<f64>>,
    pub second: BTreeMap<ParamId, Vec<f64>>,
}

/// Learning rate ramps linearly from `base_lr / warmup_steps` to `base_lr`
/// over the first `warmup_steps` steps, then stays constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    /// Global gradient norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Schedule {
    pub fn constant(lr: f64) -> Self {
        Schedule {
            base_lr: lr,
            warmup_steps: 0,
            clip_norm: None,
        }
    }

    /// Learning rate for 1-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.base_lr
        } else {
            self.base_lr * step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Applied {
        lr: f64,
        grad_norm: f64,
        clipped: bool,
    },
    /// Gradients contained NaN or infinity; nothing was changed.
    Skipped { grad_norm: f64 },
}

/// One Adam update over `params`. Tensors without a gradient entry are left
/// untouched.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = (ParamId, &'a mut [f64])>,
    grads: &Gradients,
    state: &mut OptimizerState,
    schedule: &Schedule,
) -> StepOutcome {
    let grad_norm = grads.global_norm();
    if !grads.is_finite() || !grad_norm.is_finite() {
        warn!(
            "skipping optimizer step {}: non-finite gradient (norm {grad_norm})",
            state.step + 1
        );
        return StepOutcome::Skipped { grad_norm };
    }
    let scale = match schedule.clip_norm {
        Some(cap) if grad_norm > cap => cap / grad_norm,
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step;
    let lr = schedule.lr_at(t);
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);

    for (id, values) in params {
        let Some(g) = grads.get(id) else { continue };
        assert_eq!(
            g.len(),
            values.len(),
            "gradient shape for parameter {}",
            id.0
        );
        let m = state
            .first
            .entry(id)
            .or_insert_with(|| vec![0.0; values.len()]);
        let v = state
            .second
            .entry(id)
            .or_insert_with(|| vec![0.0; values.len()]);
        for (((x, &gi), mi), vi) in values
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let gi = gi * scale;
            *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
            *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    StepOutcome::Applied {
        lr,
        grad_norm,
        clipped: scale < 1.0,
    }
}
