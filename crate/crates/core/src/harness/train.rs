use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, OptimizerState, Schedule, StepOutcome};
use super::eval::evaluate;
use crate::error::{Error, Result};
use crate::matching::Mode;
use crate::model::{Model, PreparedExample};
use crate::numerics::Gradients;

/// Learning rate used by the optimizer when fine-tuning a large pretrained
/// encoder; far too small for a freshly initialized lookup encoder.
pub const FINE_TUNE_LEARNING_RATE: f64 = 5e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of all optimizer steps spent warming up, in [0, 1).
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Overrides the model's matching dropout for the run.
    pub matching_dropout: f64,
    /// Global gradient norm cap; `None` disables clipping.
    pub gradient_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 10,
            warmup_fraction: 0.1,
            seed: 0,
            matching_dropout: 0.3,
            gradient_clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::Config(
                "learning rate and batch size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.matching_dropout) {
            return Err(Error::Config(format!(
                "matching dropout {} outside [0, 1)",
                self.matching_dropout
            )));
        }
        if self
            .gradient_clip_norm
            .is_some_and(|c| c.is_nan() || c <= 0.0)
        {
            return Err(Error::Config("gradient clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn schedule(&self, n: usize) -> Schedule {
        let total = (self.epochs * self.steps_per_epoch(n)) as f64;
        Schedule {
            base_lr: self.learning_rate,
            warmup_steps: (self.warmup_fraction * total).ceil() as u64,
            clip_norm: self.gradient_clip_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when no dev set was given.
    pub dev_accuracy: Option<f64>,
    pub wall_seconds: f64,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev accuracy (last epoch
    /// without a dev set).
    pub model: Model,
    pub best_epoch: Option<usize>,
    pub metrics: Vec<EpochMetrics>,
    /// Optimizer state at the end of the run.
    pub optimizer: OptimizerState,
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradients(
    model: &Model,
    batch: &[&PreparedExample],
    mode: &mut Mode<'_>,
) -> Result<(f64, Gradients)> {
    let mut total = Gradients::default();
    let mut loss_sum = 0.0;
    for ex in batch {
        let (loss, _, g) = model.loss_and_grads(ex, mode)?;
        loss_sum += loss;
        total.accumulate(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss_sum * inv, total))
}

/// Mini-batch Adam over `train`, evaluating on `dev` after each epoch.
/// `on_epoch` sees each epoch's metrics as soon as they exist.
pub fn train(
    model: Model,
    train: &[PreparedExample],
    dev: &[PreparedExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let configured_dropout = model.config.matching.matching_dropout;
    let mut model = model;
    model.config.matching.matching_dropout = cfg.matching_dropout;

    let schedule = cfg.schedule(train.len());
    let mut state = OptimizerState::default();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut skipped = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) =
                batch_gradients(&model, &batch, &mut Mode::Train(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            loss_sum += loss * batch.len() as f64;
            if let StepOutcome::Skipped { .. } =
                adam_step(model.param_slices_mut(), &grads, &mut state, &schedule)
            {
                skipped += 1;
            }
        }
        let dev_accuracy = if dev.is_empty() {
            None
        } else {
            Some(evaluate(&model, dev)?.accuracy)
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
            skipped_steps: skipped,
        };
        on_epoch(&m);
        metrics.push(m);
        if let Some(acc) = dev_accuracy {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, model.clone()));
            }
        }
    }

    let (mut model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, Some(epoch)),
        None => (model, None),
    };
    model.config.matching.matching_dropout = configured_dropout;
    Ok(TrainOutcome {
        model,
        best_epoch,
        metrics,
        optimizer: state,
    })
}
