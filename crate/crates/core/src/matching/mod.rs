//! Bidirectional pair matching, gated fusion, and the candidate softmax.
//!
//! The value-level functions here run one throwaway tape each. Training and
//! evaluation go through [`graph`] directly so one tape spans the whole
//! example.

mod config;
pub mod graph;
mod params;

pub use config::{AttentionNorm, Direction, Fusion, MatchConfig};
pub use graph::Mode;
pub use params::{MatchParameters, Pair, PairParameters, PAIR_FIELDS};

use crate::encoder::EncodedTriplet;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, NodeId, Tape, Vector};
use graph::{PairNodes, PairTraceNodes};

/// Intermediates of one pair, read back from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchTrace {
    pub pair: Pair,
    pub attention_u: Matrix,
    pub attention_v: Option<Matrix>,
    pub e_u: Matrix,
    pub e_v: Option<Matrix>,
    pub s_u: Matrix,
    pub s_v: Option<Matrix>,
    pub m_u: Vector,
    pub m_v: Option<Vector>,
    pub gate: Option<Vector>,
    pub fused: Vector,
}

impl MatchTrace {
    pub(crate) fn read(tape: &Tape, nodes: &PairTraceNodes) -> Self {
        let m = |id: NodeId| tape.value(id).clone();
        let v = |id: NodeId| Vector::from(tape.value(id).data().to_vec());
        MatchTrace {
            pair: nodes.pair,
            attention_u: m(nodes.matched.attention_u),
            attention_v: nodes.matched.attention_v.map(m),
            e_u: m(nodes.matched.e_u),
            e_v: nodes.matched.e_v.map(m),
            s_u: m(nodes.matched.s_u),
            s_v: nodes.matched.s_v.map(m),
            m_u: v(nodes.fused.m_u),
            m_v: nodes.fused.m_v.map(v),
            gate: nodes.fused.gate.map(v),
            fused: v(nodes.fused.out),
        }
    }
}

/// Fused pair vectors of one triplet and their concatenation `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletRepresentation {
    pub passage_question: Vector,
    pub passage_answer: Vector,
    /// Absent when the question-answer pair is switched off.
    pub question_answer: Option<Vector>,
    /// `[M^{pq}; M^{pa}; M^{qa}]`
    pub c: Vector,
}

/// Matches `hu` against `hv`, returning `(S^u, S^v)`. `S^v` is `None` in
/// unidirectional mode.
pub fn bidirectional_match(
    hu: &Matrix,
    hv: &Matrix,
    pp: &PairParameters,
    cfg: &MatchConfig,
    mode: &mut Mode<'_>,
) -> Result<(Matrix, Option<Matrix>)> {
    let mut tape = Tape::new();
    let nodes = PairNodes::constant(&mut tape, pp);
    let u = tape.constant(hu.clone());
    let v = tape.constant(hv.clone());
    let out = graph::match_pair(&mut tape, u, v, &nodes, cfg, mode)?;
    Ok((
        tape.value(out.s_u).clone(),
        out.s_v.map(|s| tape.value(s).clone()),
    ))
}

/// Pools and fuses matched sides into one pair vector.
pub fn gated_fuse(
    s_u: &Matrix,
    s_v: Option<&Matrix>,
    pp: &PairParameters,
    cfg: &MatchConfig,
) -> Result<Vector> {
    let mut tape = Tape::new();
    let nodes = PairNodes::constant(&mut tape, pp);
    let u = tape.constant(s_u.clone());
    let v = s_v.map(|s| tape.constant(s.clone()));
    let out = graph::fuse_pair(&mut tape, u, v, &nodes, cfg)?;
    Ok(Vector::from(tape.value(out.out).data().to_vec()))
}

pub fn triplet_representation(
    enc: &EncodedTriplet,
    mp: &MatchParameters,
    cfg: &MatchConfig,
) -> Result<TripletRepresentation> {
    triplet_representation_traced(enc, mp, cfg, &mut Mode::Eval).map(|(rep, _)| rep)
}

/// [`triplet_representation`] plus per-pair intermediates.
pub fn triplet_representation_traced(
    enc: &EncodedTriplet,
    mp: &MatchParameters,
    cfg: &MatchConfig,
    mode: &mut Mode<'_>,
) -> Result<(TripletRepresentation, Vec<MatchTrace>)> {
    let l = enc.hidden()?;
    cfg.validate()?;
    for p in Pair::ALL {
        mp.pair(p).validate(l)?;
    }
    let mut tape = Tape::new();
    let hp = tape.constant(enc.passage.clone());
    let hq = tape.constant(enc.question.clone());
    let ha = tape.constant(enc.answer.clone());
    let pair_list: &[(Pair, NodeId, NodeId)] = &[
        (Pair::PassageQuestion, hp, hq),
        (Pair::PassageAnswer, hp, ha),
        (Pair::QuestionAnswer, hq, ha),
    ];
    let mut traced = Vec::new();
    for &(pair, u, v) in &pair_list[..cfg.num_pairs()] {
        let weights = if cfg.share_pair_params {
            &mp.pq
        } else {
            mp.pair(pair)
        };
        let nodes = PairNodes::constant(&mut tape, weights);
        traced.push(graph::pair_representation(
            &mut tape, pair, u, v, &nodes, cfg, mode,
        )?);
    }
    let traces: Vec<MatchTrace> = traced.iter().map(|t| MatchTrace::read(&tape, t)).collect();
    let parts: Vec<&Vector> = traces.iter().map(|t| &t.fused).collect();
    let c = Vector::concat(&parts);
    let rep = TripletRepresentation {
        passage_question: traces[0].fused.clone(),
        passage_answer: traces[1].fused.clone(),
        question_answer: traces.get(2).map(|t| t.fused.clone()),
        c,
    };
    Ok((rep, traces))
}

/// Candidate probabilities `softmax_i(V·C_i)` and `-log p[gold]`.
pub fn score_and_loss(
    reps: &[TripletRepresentation],
    v: &Vector,
    gold: usize,
) -> Result<(Vector, f64)> {
    if let Some(bad) = reps.iter().find(|r| r.c.len() != v.len()) {
        return Err(Error::shape(
            "score_and_loss",
            format!("C has length {}, V has length {}", bad.c.len(), v.len()),
        ));
    }
    let mut tape = Tape::new();
    let nodes: Vec<NodeId> = reps.iter().map(|r| tape.constant(r.c.to_row())).collect();
    let vn = tape.constant(v.to_row());
    let loss = graph::score_candidates(&mut tape, &nodes, vn, gold)?;
    let probs = Vector::from(tape.softmax_probs(loss).expect("softmax_nll node").to_vec());
    Ok((probs, tape.value(loss).get(0, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_pair(l: usize, seed: u64) -> PairParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pp = PairParameters::init(l, &mut rng);
        pp.b = Vector::from(Matrix::random_uniform(1, l, 0.5, &mut rng).into_data());
        pp
    }

    fn eval_cfg() -> MatchConfig {
        MatchConfig {
            matching_dropout: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn single_token_attention_copies_the_other_side() {
        let pp = rand_pair(3, 1);
        let hu = Matrix::from_rows(&[vec![0.2, -0.4, 0.9]]).unwrap();
        let hv = Matrix::from_rows(&[vec![-0.7, 0.1, 0.3]]).unwrap();
        for attention in [AttentionNorm::Dual, AttentionNorm::Literal] {
            let cfg = MatchConfig {
                attention,
                ..eval_cfg()
            };
            let (s_u, s_v) = bidirectional_match(&hu, &hv, &pp, &cfg, &mut Mode::Eval).unwrap();
            let want_u = hv.matmul(&pp.w1).unwrap().map(crate::numerics::relu);
            let want_v = hu.matmul(&pp.w2).unwrap().map(crate::numerics::relu);
            assert_eq!(s_u, want_u);
            assert_eq!(s_v.unwrap(), want_v);
        }
    }

    #[test]
    fn identical_rows_are_a_fixed_point_of_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pp = rand_pair(4, 2);
        let hu = Matrix::random_uniform(3, 4, 1.0, &mut rng);
        let r = vec![0.3, -0.1, 0.8, 0.05];
        let hv = Matrix::from_rows(&[r.clone(), r.clone(), r.clone()]).unwrap();
        let mut tape = Tape::new();
        let nodes = PairNodes::constant(&mut tape, &pp);
        let u = tape.constant(hu);
        let v = tape.constant(hv);
        let out = graph::match_pair(&mut tape, u, v, &nodes, &eval_cfg(), &mut Mode::Eval).unwrap();
        let e_u = tape.value(out.e_u);
        for i in 0..3 {
            for (a, b) in e_u.row(i).iter().zip(&r) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unidirectional_has_no_v_side() {
        let pp = rand_pair(2, 3);
        let cfg = MatchConfig {
            direction: Direction::Unidirectional,
            ..eval_cfg()
        };
        let (_, s_v) = bidirectional_match(
            &Matrix::filled(2, 2, 0.5),
            &Matrix::filled(3, 2, 0.1),
            &pp,
            &cfg,
            &mut Mode::Eval,
        )
        .unwrap();
        assert!(s_v.is_none());
    }

    #[test]
    fn hidden_mismatch_rejected() {
        let pp = rand_pair(2, 3);
        let r = bidirectional_match(
            &Matrix::zeros(2, 2),
            &Matrix::zeros(2, 3),
            &pp,
            &eval_cfg(),
            &mut Mode::Eval,
        );
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn neutral_and_saturated_gates() {
        let l = 3;
        let s_u = Matrix::from_rows(&[vec![0.1, 0.9, 0.0], vec![0.5, 0.2, 0.3]]).unwrap();
        let s_v = Matrix::from_rows(&[vec![0.7, 0.0, 0.4]]).unwrap();
        let mut pp = PairParameters::zeros(l);
        let cfg = eval_cfg();
        let out = gated_fuse(&s_u, Some(&s_v), &pp, &cfg).unwrap();
        let want = [0.6, 0.45, 0.35];
        for (a, b) in out.as_slice().iter().zip(want) {
            assert!((a - b).abs() <= 1e-12);
        }
        pp.b = Vector::filled(l, 50.0);
        let out = gated_fuse(&s_u, Some(&s_v), &pp, &cfg).unwrap();
        for (a, b) in out.as_slice().iter().zip([0.5, 0.9, 0.3]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn concat_and_unidirectional_fusion_shapes() {
        let pp = PairParameters::zeros(2);
        let s = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let cfg = MatchConfig {
            fusion: Fusion::Concat,
            ..eval_cfg()
        };
        assert_eq!(
            gated_fuse(&s, Some(&t), &pp, &cfg).unwrap().as_slice(),
            &[1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            gated_fuse(&s, None, &pp, &eval_cfg()).unwrap().as_slice(),
            &[1.0, 2.0]
        );
        assert!(gated_fuse(&s, Some(&Matrix::zeros(1, 3)), &pp, &cfg).is_err());
    }

    fn rep(c: Vec<f64>) -> TripletRepresentation {
        let c = Vector::from(c);
        TripletRepresentation {
            passage_question: c.clone(),
            passage_answer: c.clone(),
            question_answer: None,
            c,
        }
    }

    #[test]
    fn zero_scorer_is_uniform() {
        let reps: Vec<_> = (0..4).map(|i| rep(vec![i as f64, 1.0])).collect();
        let (probs, loss) = score_and_loss(&reps, &Vector::zeros(2), 3).unwrap();
        assert!(probs.as_slice().iter().all(|&p| p == 0.25));
        assert!((loss - 1.386294).abs() < 1e-6);
        assert!((loss - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn saturated_logits() {
        let reps = vec![rep(vec![1000.0]), rep(vec![0.0])];
        let (probs, loss) = score_and_loss(&reps, &Vector::from(vec![1.0]), 0).unwrap();
        assert!((probs[0] - 1.0).abs() < 1e-12 && probs[1] < 1e-300);
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn scorer_errors() {
        let reps = vec![rep(vec![1.0, 2.0]), rep(vec![0.0, 1.0])];
        assert!(score_and_loss(&reps, &Vector::zeros(3), 0).is_err());
        assert!(score_and_loss(&reps, &Vector::zeros(2), 2).is_err());
        assert!(score_and_loss(&reps[..1], &Vector::zeros(2), 0).is_err());
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pp = rand_pair(6, 9);
        let hu = Matrix::random_uniform(5, 6, 1.0, &mut rng);
        let hv = Matrix::random_uniform(4, 6, 1.0, &mut rng);
        let cfg = MatchConfig::default();
        let (eval_u, _) = bidirectional_match(&hu, &hv, &pp, &cfg, &mut Mode::Eval).unwrap();
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let (train_u, _) =
            bidirectional_match(&hu, &hv, &pp, &cfg, &mut Mode::Train(&mut drng)).unwrap();
        assert_ne!(eval_u, train_u);
        for (a, b) in eval_u.data().iter().zip(train_u.data()) {
            assert!(*b == 0.0 || (b - a / 0.7).abs() < 1e-12);
        }
    }
}
