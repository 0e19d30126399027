use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else 1/(1-rate).
pub(crate) fn mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout. Eval mode and rate 0 return `m` unchanged.
pub fn dropout(m: &Matrix, rate: f64, mode: DropoutMode, seed: u64) -> Result<Matrix> {
    check_rate(rate)?;
    if mode == DropoutMode::Eval || rate == 0.0 {
        return Ok(m.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = mask(m.len(), rate, &mut rng);
    let mut out = m.clone();
    for (x, k) in out.data_mut().iter_mut().zip(mask) {
        *x *= k;
    }
    Ok(out)
}
