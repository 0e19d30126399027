mod common;

use common::{
    agrees, all_configs, central_difference, kink_within_step, max_abs_diff, random_example,
    random_instance,
};
use dmn_core::encoder::{split_tokens, tokenize, EncodedTriplet, Vocabulary};
use dmn_core::harness::random_gradcheck_case;
use dmn_core::matching::{
    bidirectional_match, gated_fuse, triplet_representation_traced, MatchConfig, Mode,
    PairParameters,
};
use dmn_core::model::{Inputs, EMBEDDING_PARAM};
use dmn_core::numerics::{dropout, relu, sigmoid, DropoutMode, Matrix};
use dmn_core::{Model, ModelConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> ProptestConfig {
    ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(64)
    }
}

fn matrix(max_rows: usize, max_cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(r, c)| {
        prop::collection::vec(-scale..scale, r * c)
            .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
    })
}

fn pair_case() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1usize..=8, 1usize..=8, 1usize..=8)
}

fn random_pair(seed: u64, l: usize, nu: usize, nv: usize) -> (PairParameters, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pp = PairParameters::init(l, &mut rng);
    let hu = Matrix::random_uniform(nu, l, 1.5, &mut rng);
    let hv = Matrix::random_uniform(nv, l, 1.5, &mut rng);
    (pp, hu, hv)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn softmax_rows_are_distributions(m in matrix(6, 6, 10.0), big in prop::sample::select(vec![0.0, 1e4, -1e4])) {
        let mut m = m;
        m.set(0, 0, big);
        let s = m.softmax_rows().unwrap();
        for i in 0..s.rows() {
            let row = s.row(i);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_row_shift(m in matrix(5, 6, 5.0), shift in -50.0f64..50.0) {
        let shifted = m.map(|x| x + shift);
        let d = max_abs_diff(m.softmax_rows().unwrap().data(), shifted.softmax_rows().unwrap().data());
        prop_assert!(d <= 1e-12, "{d}");
    }

    #[test]
    fn activations_stay_in_range(x in -30.0f64..30.0) {
        prop_assert!(relu(x) >= 0.0);
        prop_assert!(relu(x) == x.max(0.0));
        let s = sigmoid(x);
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!((sigmoid(-x) - (1.0 - s)).abs() <= 1e-15);
    }

    #[test]
    fn maxpool_picks_a_column_maximum(m in matrix(7, 5, 3.0)) {
        let (pooled, rows) = m.maxpool_over_rows().unwrap();
        for (j, (&best, &row)) in pooled.as_slice().iter().zip(&rows).enumerate() {
            prop_assert_eq!(best, m.get(row, j));
            prop_assert!((0..m.rows()).all(|i| m.get(i, j) <= best));
        }
    }

    #[test]
    fn eval_dropout_is_identity(m in matrix(5, 5, 3.0), rate in 0.0f64..0.95, seed in any::<u64>()) {
        let out = dropout(&m, rate, DropoutMode::Eval, seed).unwrap();
        let same = out.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn dual_matching_is_swap_symmetric((seed, l, nu, nv) in pair_case()) {
        let (pp, hu, hv) = random_pair(seed, l, nu, nv);
        let cfg = MatchConfig::default();
        let (su, sv) = bidirectional_match(&hu, &hv, &pp, &cfg, &mut Mode::Eval).unwrap();
        let (su_sw, sv_sw) = bidirectional_match(&hv, &hu, &pp.swapped(), &cfg, &mut Mode::Eval).unwrap();
        prop_assert!(max_abs_diff(su.data(), sv_sw.unwrap().data()) <= 1e-12);
        prop_assert!(max_abs_diff(sv.unwrap().data(), su_sw.data()) <= 1e-12);
    }

    #[test]
    fn matched_sides_are_nonnegative_with_expected_shapes((seed, l, nu, nv) in pair_case(), k in 0usize..8) {
        let cfg = all_configs()[k];
        let (pp, hu, hv) = random_pair(seed, l, nu, nv);
        let (su, sv) = bidirectional_match(&hu, &hv, &pp, &cfg, &mut Mode::Eval).unwrap();
        prop_assert_eq!(su.shape(), (nu, l));
        prop_assert!(su.data().iter().all(|&x| x >= 0.0));
        prop_assert_eq!(sv.is_some(), cfg.is_bidirectional());
        if let Some(sv) = sv {
            prop_assert_eq!(sv.shape(), (nv, l));
            prop_assert!(sv.data().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn gated_fusion_is_convex((seed, l, nu, nv) in pair_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pp = PairParameters::init(l, &mut rng);
        pp.w3 = Matrix::random_uniform(l, l, 3.0, &mut rng);
        let s_u = Matrix::random_uniform(nu, l, 2.0, &mut rng);
        let s_v = Matrix::random_uniform(nv, l, 2.0, &mut rng);
        let fused = gated_fuse(&s_u, Some(&s_v), &pp, &MatchConfig::default()).unwrap();
        let (m_u, _) = s_u.maxpool_over_rows().unwrap();
        let (m_v, _) = s_v.maxpool_over_rows().unwrap();
        for j in 0..l {
            let (a, b) = (m_u.as_slice()[j], m_v.as_slice()[j]);
            let x = fused.as_slice()[j];
            prop_assert!(x >= a.min(b) - 1e-12 && x <= a.max(b) + 1e-12);
        }
    }

    #[test]
    fn traces_respect_contracts(seed in any::<u64>(), k in 0usize..8) {
        let cfg = all_configs()[k];
        let (model, ex) = random_instance(seed, cfg);
        let l = model.config.hidden;
        let Inputs::Tokens { passage, question, candidates } = &ex.inputs else { unreachable!() };
        let table = &model.embeddings.as_ref().unwrap().weights;
        let rows = |ids: &[usize]| Matrix::from_rows(&ids.iter().map(|&i| table.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let enc = EncodedTriplet::new(rows(&passage.ids), rows(&question.ids), rows(&candidates[0].ids)).unwrap();
        let (rep, traces) = triplet_representation_traced(&enc, &model.params, &cfg, &mut Mode::Eval).unwrap();
        prop_assert_eq!(rep.c.len(), cfg.representation_len(l));
        prop_assert_eq!(traces.len(), cfg.num_pairs());
        for t in &traces {
            prop_assert!(t.s_u.data().iter().all(|&x| x >= 0.0));
            for row in 0..t.attention_u.rows() {
                prop_assert!((t.attention_u.row(row).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            if let Some(g) = &t.gate {
                prop_assert!(g.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
            prop_assert_eq!(t.fused.len(), cfg.pair_output_len(l));
        }
    }

    #[test]
    fn candidate_order_is_equivariant(seed in any::<u64>(), k in 0usize..8, rot in 1usize..4) {
        let (model, _) = random_instance(seed, all_configs()[k]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let ex = random_example(&mut rng, 16, 8, "perm");
        let n = ex.candidates.len();
        let rot = rot % n;
        let mut rotated = ex.clone();
        rotated.candidates.rotate_left(rot);
        rotated.gold = (ex.gold + n - rot) % n;
        let (loss_a, probs_a) = model.evaluate_example(&model.prepare(&ex).unwrap()).unwrap();
        let (loss_b, probs_b) = model.evaluate_example(&model.prepare(&rotated).unwrap()).unwrap();
        prop_assert!((loss_a - loss_b).abs() <= 1e-12);
        for i in 0..n {
            prop_assert!((probs_a.as_slice()[(i + rot) % n] - probs_b.as_slice()[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn embedding_gradient_touches_only_present_tokens(seed in any::<u64>()) {
        let (model, ex) = random_instance(seed, MatchConfig::default());
        let (_, _, grads) = model.loss_and_grads(&ex, &mut Mode::Eval).unwrap();
        let Inputs::Tokens { passage, question, candidates } = &ex.inputs else { unreachable!() };
        let mut present = vec![false; model.vocab.len()];
        for seq in [passage, question].into_iter().chain(candidates) {
            for &id in &seq.ids {
                present[id] = true;
            }
        }
        let g = grads.get(EMBEDDING_PARAM).unwrap();
        for (row, seen) in present.iter().enumerate() {
            if !seen {
                prop_assert!(g.row(row).iter().all(|&x| x == 0.0), "row {row} has gradient");
            }
        }
    }

    #[test]
    fn tokenization_is_idempotent(text in "[ a-zA-Z0-9.,!?'-]{1,60}") {
        let once = split_tokens(&text);
        let twice = split_tokens(&once.join(" "));
        prop_assert_eq!(&once, &twice);
        if !once.is_empty() {
            let vocab = Vocabulary::build(std::iter::once(text.as_str()), Some(100));
            let a = tokenize(&text, &vocab, 64).unwrap();
            let b = tokenize(&once.join(" "), &vocab, 64).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

/// Analytic gradients against a per-entry central difference. An entry
/// passes if it meets the relative bound, if the two values agree to within
/// the rounding noise of the difference quotient, or if the stencil straddles
/// a kink and a narrower stencil agrees.
fn noise_aware_check(
    model: &Model,
    ex: &dmn_core::model::PreparedExample,
    h: f64,
    tol: f64,
) -> Result<(), String> {
    let (_, _, grads) = model.loss_and_grads(ex, &mut Mode::Eval).unwrap();
    let analytic = model.dense_gradients(&grads);
    for (k, id) in model.param_ids().into_iter().enumerate() {
        for i in 0..analytic[k].len() {
            let (numeric, f) = central_difference(model, ex, id, i, h);
            let a = analytic[k].data()[i];
            if !agrees(a, numeric, f, h, tol) && !kink_within_step(model, ex, id, i, h, tol) {
                return Err(format!("{id:?}[{i}]: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(200) })]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), hidden in 1usize..=8, k in 0usize..8) {
        let (model, ex) = random_gradcheck_case(hidden, all_configs()[k], seed).unwrap();
        let res = noise_aware_check(&model, &ex, 1e-5, 1e-4);
        prop_assert!(res.is_ok(), "{}", res.unwrap_err());
    }
}

#[test]
fn reference_agrees_with_hidden_inputs() {
    let (model, ex) = random_instance(5, MatchConfig::default());
    let Inputs::Tokens {
        passage,
        question,
        candidates,
    } = &ex.inputs
    else {
        unreachable!()
    };
    let table = &model.embeddings.as_ref().unwrap().weights;
    let rows = |ids: &[usize]| {
        Matrix::from_rows(
            &ids.iter()
                .map(|&i| table.row(i).to_vec())
                .collect::<Vec<_>>(),
        )
        .unwrap()
    };
    let hidden = dmn_core::model::PreparedExample {
        id: ex.id.clone(),
        inputs: Inputs::Hidden {
            passage: rows(&passage.ids),
            question: rows(&question.ids),
            candidates: candidates.iter().map(|c| rows(&c.ids)).collect(),
        },
        gold: ex.gold,
    };
    let config = ModelConfig {
        encoder: dmn_core::model::EncoderKind::Precomputed,
        ..model.config
    };
    let mut frozen = Model::new(config, model.vocab.clone(), 0).unwrap();
    frozen.params = model.params.clone();
    let a = common::reference_forward(&frozen, &hidden);
    let (loss, probs) = frozen.evaluate_example(&hidden).unwrap();
    assert!((loss - a.loss).abs() <= 1e-12);
    assert!(max_abs_diff(probs.as_slice(), &a.probs) <= 1e-12);
}
