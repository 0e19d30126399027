//! Finite-difference verification of a whole model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{synthetic_token, Vocabulary};
use crate::error::Result;
use crate::interface::MultiChoiceExample;
use crate::matching::{MatchConfig, Mode};
use crate::model::{Model, ModelConfig, PreparedExample};
use crate::numerics::{finite_diff_check, GradReport, Matrix};

/// Checks every trained tensor of `model` on `ex` with dropout off.
pub fn model_gradient_check(
    model: &Model,
    ex: &PreparedExample,
    h: f64,
    tol: f64,
) -> Result<GradReport> {
    let (_, _, grads) = model.loss_and_grads(ex, &mut Mode::Eval)?;
    let analytic = model.dense_gradients(&grads);
    let named = model.parameters();
    let ids: Vec<_> = named.iter().map(|(id, _, _)| *id).collect();
    let params: Vec<(String, Matrix)> = named.into_iter().map(|(_, n, m)| (n, m)).collect();
    let mut probe = model.clone();
    finite_diff_check(
        |values| {
            for (id, m) in ids.iter().zip(values) {
                probe.set_parameter(*id, m)?;
            }
            Ok(probe.evaluate_example(ex)?.0)
        },
        &params,
        &analytic,
        h,
        tol,
    )
}

/// Small random model and example for gradient checks: vocabulary of 20,
/// sequences of 2..=6 tokens, 2 or 4 candidates, every parameter entry
/// drawn from U(-1, 1).
pub fn random_gradcheck_case(
    hidden: usize,
    matching: MatchConfig,
    seed: u64,
) -> Result<(Model, PreparedExample)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocabulary::synthetic(20);
    let config = ModelConfig {
        hidden,
        max_len: 16,
        matching,
        ..Default::default()
    };
    let mut model = Model::new(config, vocab, rng.gen())?;
    for id in model.param_ids() {
        for x in model.param_slice_mut(id).expect("known id") {
            *x = rng.gen_range(-1.0..1.0);
        }
    }

    let text = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(2..=6);
        (0..n)
            .map(|_| synthetic_token(rng.gen_range(2..20)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let n = if rng.gen_bool(0.5) { 2 } else { 4 };
    let ex = MultiChoiceExample {
        id: format!("gradcheck-{seed}"),
        passage: text(&mut rng),
        question: text(&mut rng),
        candidates: (0..n).map(|_| text(&mut rng)).collect(),
        gold: rng.gen_range(0..n),
    };
    let prepared = model.prepare(&ex)?;
    Ok((model, prepared))
}
