use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Model, PreparedExample};
use crate::numerics::Vector;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub id: String,
    pub predicted: usize,
    pub gold: usize,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub predictions: Vec<Prediction>,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Dropout-free accuracy over `data`. Examples are scored in parallel and
/// collected in input order.
pub fn evaluate(model: &Model, data: &[PreparedExample]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let scored: Vec<(f64, Vector)> = data
        .par_iter()
        .map(|ex| model.evaluate_example(ex))
        .collect::<Result<_>>()?;
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let predictions = data
        .iter()
        .zip(scored)
        .map(|(ex, (loss, probs))| {
            let predicted = argmax(probs.as_slice());
            correct += usize::from(predicted == ex.gold);
            loss_sum += loss;
            Prediction {
                id: ex.id.clone(),
                predicted,
                gold: ex.gold,
                probs: probs.into_vec(),
            }
        })
        .collect();
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: loss_sum / n,
        predictions,
    })
}
