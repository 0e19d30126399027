//! Tape-level building blocks of the matching stack.

use rand::RngCore;

use super::{AttentionNorm, Fusion, MatchConfig, Pair, PairParameters};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, NodeId, ParamId, Tape};

/// Forward mode. Training carries the generator used for dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// A pair's weights registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PairNodes {
    pub w: NodeId,
    pub w1: NodeId,
    pub w2: NodeId,
    pub w3: NodeId,
    pub w4: NodeId,
    pub b: NodeId,
}

impl PairNodes {
    /// `ids` follow [`super::PAIR_FIELDS`] order.
    pub fn register(tape: &mut Tape, pp: &PairParameters, ids: [ParamId; 6]) -> Self {
        PairNodes {
            w: tape.param(ids[0], &pp.w),
            w1: tape.param(ids[1], &pp.w1),
            w2: tape.param(ids[2], &pp.w2),
            w3: tape.param(ids[3], &pp.w3),
            w4: tape.param(ids[4], &pp.w4),
            b: tape.param(ids[5], &pp.b.to_row()),
        }
    }

    /// Registers the weights as constants (no gradient).
    pub fn constant(tape: &mut Tape, pp: &PairParameters) -> Self {
        PairNodes {
            w: tape.constant(pp.w.clone()),
            w1: tape.constant(pp.w1.clone()),
            w2: tape.constant(pp.w2.clone()),
            w3: tape.constant(pp.w3.clone()),
            w4: tape.constant(pp.w4.clone()),
            b: tape.constant(pp.b.to_row()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MatchNodes {
    /// Row-normalized weights of `u` over `v` (`|U| x |V|`).
    pub attention_u: NodeId,
    /// Row-normalized weights of `v` over `u`; dual mode only.
    pub attention_v: Option<NodeId>,
    pub e_u: NodeId,
    pub e_v: Option<NodeId>,
    pub s_u: NodeId,
    pub s_v: Option<NodeId>,
}

#[derive(Clone, Copy, Debug)]
pub struct FuseNodes {
    pub m_u: NodeId,
    pub m_v: Option<NodeId>,
    pub gate: Option<NodeId>,
    pub out: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct PairTraceNodes {
    pub pair: Pair,
    pub matched: MatchNodes,
    pub fused: FuseNodes,
}

fn check_hidden(tape: &Tape, hu: NodeId, hv: NodeId, w: NodeId) -> Result<()> {
    let l = tape.value(w).rows();
    let (u, v) = (tape.value(hu), tape.value(hv));
    if u.cols() != l || v.cols() != l {
        return Err(Error::shape(
            "bidirectional_match",
            format!(
                "hidden sizes {} and {} against {l}x{l} weights",
                u.cols(),
                v.cols()
            ),
        ));
    }
    if u.rows() == 0 || v.rows() == 0 {
        return Err(Error::EmptySequence("bidirectional_match"));
    }
    Ok(())
}

fn maybe_dropout(tape: &mut Tape, x: NodeId, rate: f64, mode: &mut Mode<'_>) -> Result<NodeId> {
    match mode {
        Mode::Eval => Ok(x),
        Mode::Train(rng) => tape.dropout(x, rate, &mut **rng),
    }
}

/// Attention in both directions followed by `S = ReLU(E W1|W2)`.
pub fn match_pair(
    tape: &mut Tape,
    hu: NodeId,
    hv: NodeId,
    pair: &PairNodes,
    cfg: &MatchConfig,
    mode: &mut Mode<'_>,
) -> Result<MatchNodes> {
    check_hidden(tape, hu, hv, pair.w)?;
    let hu_w = tape.matmul(hu, pair.w)?;
    let hv_t = tape.transpose(hv);
    let scores = tape.matmul(hu_w, hv_t)?;
    let attention_u = tape.softmax_rows(scores)?;
    let e_u = tape.matmul(attention_u, hv)?;
    let pre_u = tape.matmul(e_u, pair.w1)?;
    let s_u = tape.relu(pre_u);
    let s_u = maybe_dropout(tape, s_u, cfg.matching_dropout, mode)?;

    if !cfg.is_bidirectional() {
        return Ok(MatchNodes {
            attention_u,
            attention_v: None,
            e_u,
            e_v: None,
            s_u,
            s_v: None,
        });
    }

    let (attention_v, e_v) = match cfg.attention {
        AttentionNorm::Dual => {
            // Hv W^T Hu^T is the transpose of the forward scores.
            let scores_t = tape.transpose(scores);
            let att = tape.softmax_rows(scores_t)?;
            (Some(att), tape.matmul(att, hu)?)
        }
        AttentionNorm::Literal => {
            let att_t = tape.transpose(attention_u);
            (None, tape.matmul(att_t, hu)?)
        }
    };
    let pre_v = tape.matmul(e_v, pair.w2)?;
    let s_v = tape.relu(pre_v);
    let s_v = maybe_dropout(tape, s_v, cfg.matching_dropout, mode)?;
    Ok(MatchNodes {
        attention_u,
        attention_v,
        e_u,
        e_v: Some(e_v),
        s_u,
        s_v: Some(s_v),
    })
}

/// Max-pools both sides and merges them by gate or concatenation. With no
/// `s_v` (unidirectional) the pooled `u` side is the output.
pub fn fuse_pair(
    tape: &mut Tape,
    s_u: NodeId,
    s_v: Option<NodeId>,
    pair: &PairNodes,
    cfg: &MatchConfig,
) -> Result<FuseNodes> {
    let l = tape.value(pair.w3).rows();
    if tape.value(s_u).cols() != l || s_v.is_some_and(|s| tape.value(s).cols() != l) {
        return Err(Error::shape(
            "gated_fuse",
            format!("matched sides must have {l} columns"),
        ));
    }
    let m_u = tape.maxpool_rows(s_u)?;
    let Some(s_v) = s_v else {
        return Ok(FuseNodes {
            m_u,
            m_v: None,
            gate: None,
            out: m_u,
        });
    };
    let m_v = tape.maxpool_rows(s_v)?;
    match cfg.fusion {
        Fusion::Concat => {
            let out = tape.concat_cols(&[m_u, m_v])?;
            Ok(FuseNodes {
                m_u,
                m_v: Some(m_v),
                gate: None,
                out,
            })
        }
        Fusion::Gated => {
            let zu = tape.matmul(m_u, pair.w3)?;
            let zv = tape.matmul(m_v, pair.w4)?;
            let z = tape.add(zu, zv)?;
            let z = tape.add(z, pair.b)?;
            let gate = tape.sigmoid(z);
            let ones = tape.constant(Matrix::filled(1, l, 1.0));
            let keep_v = tape.sub(ones, gate)?;
            let a = tape.mul(gate, m_u)?;
            let c = tape.mul(keep_v, m_v)?;
            let out = tape.add(a, c)?;
            Ok(FuseNodes {
                m_u,
                m_v: Some(m_v),
                gate: Some(gate),
                out,
            })
        }
    }
}

pub fn pair_representation(
    tape: &mut Tape,
    pair: Pair,
    hu: NodeId,
    hv: NodeId,
    nodes: &PairNodes,
    cfg: &MatchConfig,
    mode: &mut Mode<'_>,
) -> Result<PairTraceNodes> {
    let matched = match_pair(tape, hu, hv, nodes, cfg, mode)?;
    let fused = fuse_pair(tape, matched.s_u, matched.s_v, nodes, cfg)?;
    Ok(PairTraceNodes {
        pair,
        matched,
        fused,
    })
}

/// Candidate softmax loss over representations `reps` (each 1 x d) scored by
/// `v` (1 x d). Returns the loss node; probabilities via `Tape::softmax_probs`.
pub fn score_candidates(
    tape: &mut Tape,
    reps: &[NodeId],
    v: NodeId,
    gold: usize,
) -> Result<NodeId> {
    let d = tape.value(v).cols();
    if reps.len() < 2 {
        return Err(Error::shape(
            "score_and_loss",
            format!("need at least 2 candidates, got {}", reps.len()),
        ));
    }
    if gold >= reps.len() {
        return Err(Error::shape(
            "score_and_loss",
            format!(
                "gold index {gold} out of range for {} candidates",
                reps.len()
            ),
        ));
    }
    for &r in reps {
        if tape.value(r).shape() != (1, d) {
            return Err(Error::shape(
                "score_and_loss",
                format!(
                    "representation length {} does not match V length {d}",
                    tape.value(r).len()
                ),
            ));
        }
    }
    let stacked = tape.concat_rows(reps)?;
    let stacked_t = tape.transpose(stacked);
    let logits = tape.matmul(v, stacked_t)?;
    tape.softmax_nll(logits, gold)
}
