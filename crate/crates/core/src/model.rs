//! Encoder plus matching stack, with a fixed parameter numbering.
//!
//! | id     | tensor                                   |
//! |--------|------------------------------------------|
//! | 0      | embedding table (lookup encoder only)    |
//! | 1..=6  | pq: W, W1, W2, W3, W4, b                 |
//! | 7..=12 | pa: same order                           |
//! | 13..=18| qa: same order                           |
//! | 19     | V                                        |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode_lookup_on, tokenize, EmbeddingStore, EmbeddingTable, Role, TokenSequence, Vocabulary,
};
use crate::error::{Error, Result};
use crate::interface::MultiChoiceExample;
use crate::matching::graph::{self, Mode, PairNodes};
use crate::matching::{MatchConfig, MatchParameters, Pair, TripletRepresentation, PAIR_FIELDS};
use crate::numerics::{Gradients, Matrix, NodeId, ParamId, Tape, Vector};

pub const EMBEDDING_PARAM: ParamId = ParamId(0);
pub const V_PARAM: ParamId = ParamId(19);
pub const NUM_PARAMS: usize = 20;

pub fn pair_param_ids(pair: Pair) -> [ParamId; 6] {
    let base = 1 + 6 * pair.index();
    std::array::from_fn(|f| ParamId(base + f))
}

pub fn param_name(id: ParamId) -> String {
    match id.0 {
        0 => "embeddings".into(),
        19 => "v".into(),
        n @ 1..=18 => {
            let pair = Pair::ALL[(n - 1) / 6];
            format!("{}.{}", pair.short_name(), PAIR_FIELDS[(n - 1) % 6])
        }
        n => format!("param{n}"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Trainable embedding table.
    Lookup,
    /// Frozen matrices from an [`EmbeddingStore`].
    Precomputed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden size `l`.
    pub hidden: usize,
    pub max_len: usize,
    pub encoder: EncoderKind,
    pub matching: MatchConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            max_len: 64,
            encoder: EncoderKind::Lookup,
            matching: MatchConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Hidden size and sequence cap of a BERT-large encoder.
    pub fn large_encoder_scale() -> Self {
        ModelConfig {
            hidden: 1024,
            max_len: 512,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "hidden size and max length must be positive".into(),
            ));
        }
        self.matching.validate()
    }
}

/// Encoder input of one example.
#[derive(Clone, Debug, PartialEq)]
pub enum Inputs {
    Tokens {
        passage: TokenSequence,
        question: TokenSequence,
        candidates: Vec<TokenSequence>,
    },
    Hidden {
        passage: Matrix,
        question: Matrix,
        candidates: Vec<Matrix>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample {
    pub id: String,
    pub inputs: Inputs,
    pub gold: usize,
}

impl PreparedExample {
    pub fn num_candidates(&self) -> usize {
        match &self.inputs {
            Inputs::Tokens { candidates, .. } => candidates.len(),
            Inputs::Hidden { candidates, .. } => candidates.len(),
        }
    }
}

/// Node handles of one candidate on a forward tape.
#[derive(Clone, Debug)]
pub struct CandidateNodes {
    pub passage_question: NodeId,
    pub passage_answer: NodeId,
    pub question_answer: Option<NodeId>,
    pub c: NodeId,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub loss: NodeId,
    pub candidates: Vec<CandidateNodes>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub embeddings: Option<EmbeddingTable>,
    pub params: MatchParameters,
}

impl Model {
    /// Fresh model. Embeddings are drawn first, then the pair weights, from
    /// one generator seeded with `seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = match config.encoder {
            EncoderKind::Lookup => Some(EmbeddingTable::init(vocab.len(), config.hidden, &mut rng)),
            EncoderKind::Precomputed => None,
        };
        let params = MatchParameters::init(config.hidden, &config.matching, &mut rng);
        Ok(Model {
            config,
            vocab,
            embeddings,
            params,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let l = self.config.hidden;
        match (&self.config.encoder, &self.embeddings) {
            (EncoderKind::Lookup, Some(t)) => {
                if t.weights.shape() != (self.vocab.len(), l) {
                    return Err(Error::shape(
                        "Model",
                        format!(
                            "embedding table {:?} for vocabulary {} and hidden {l}",
                            t.weights.shape(),
                            self.vocab.len()
                        ),
                    ));
                }
            }
            (EncoderKind::Lookup, None) => {
                return Err(Error::Config(
                    "lookup encoder without an embedding table".into(),
                ))
            }
            (EncoderKind::Precomputed, Some(_)) => {
                return Err(Error::Config(
                    "precomputed encoder must not carry an embedding table".into(),
                ))
            }
            (EncoderKind::Precomputed, None) => {}
        }
        self.params.validate(l, &self.config.matching)
    }

    /// Tokenizes an example for the lookup encoder. An empty question becomes
    /// a single unknown token.
    pub fn prepare(&self, ex: &MultiChoiceExample) -> Result<PreparedExample> {
        ex.validate()?;
        let max_len = self.config.max_len;
        let wrap = |what: &str, r: Result<TokenSequence>| {
            r.map_err(|e| Error::InvalidExample {
                id: ex.id.clone(),
                reason: format!("{what}: {e}"),
            })
        };
        let passage = wrap("passage", tokenize(&ex.passage, &self.vocab, max_len))?;
        let question = if ex.question.trim().is_empty() {
            TokenSequence::placeholder()
        } else {
            wrap("question", tokenize(&ex.question, &self.vocab, max_len))?
        };
        let candidates = ex
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| wrap(&format!("candidate {i}"), tokenize(c, &self.vocab, max_len)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedExample {
            id: ex.id.clone(),
            inputs: Inputs::Tokens {
                passage,
                question,
                candidates,
            },
            gold: ex.gold,
        })
    }

    /// Pulls the example's hidden matrices from a store.
    pub fn prepare_precomputed(
        &self,
        ex: &MultiChoiceExample,
        store: &EmbeddingStore,
    ) -> Result<PreparedExample> {
        ex.validate()?;
        let l = self.config.hidden;
        let passage = store.get_checked(&ex.id, Role::Passage, l)?.clone();
        let question = store.get_checked(&ex.id, Role::Question, l)?.clone();
        let candidates = (0..ex.candidates.len())
            .map(|i| store.get_checked(&ex.id, Role::Answer(i), l).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedExample {
            id: ex.id.clone(),
            inputs: Inputs::Hidden {
                passage,
                question,
                candidates,
            },
            gold: ex.gold,
        })
    }

    pub fn prepare_all(
        &self,
        examples: &[MultiChoiceExample],
        store: Option<&EmbeddingStore>,
    ) -> Result<Vec<PreparedExample>> {
        examples
            .iter()
            .map(|ex| match (self.config.encoder, store) {
                (EncoderKind::Lookup, _) => self.prepare(ex),
                (EncoderKind::Precomputed, Some(s)) => self.prepare_precomputed(ex, s),
                (EncoderKind::Precomputed, None) => Err(Error::Config(
                    "precomputed encoder needs an embedding store".into(),
                )),
            })
            .collect()
    }

    fn encode(&self, tape: &mut Tape, tokens: &TokenSequence) -> Result<NodeId> {
        let table = self
            .embeddings
            .as_ref()
            .ok_or_else(|| Error::Config("model has no embedding table".into()))?;
        encode_lookup_on(tape, EMBEDDING_PARAM, tokens, table)
    }

    fn hidden_leaf(&self, tape: &mut Tape, m: &Matrix) -> Result<NodeId> {
        if m.cols() != self.config.hidden || m.rows() == 0 {
            return Err(Error::shape(
                "encoder",
                format!(
                    "{}x{} input for hidden size {}",
                    m.rows(),
                    m.cols(),
                    self.config.hidden
                ),
            ));
        }
        Ok(tape.constant(m.clone()))
    }

    /// Records the whole example on `tape`. The passage-question pair does not
    /// depend on the candidate: it is computed once and kept in each `C`, but
    /// left out of the logits, where it would add the same amount to every
    /// candidate.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ex: &PreparedExample,
        mode: &mut Mode<'_>,
    ) -> Result<Forward> {
        let (hp, hq, has) = match &ex.inputs {
            Inputs::Tokens {
                passage,
                question,
                candidates,
            } => {
                let hp = self.encode(tape, passage)?;
                let hq = self.encode(tape, question)?;
                let has = candidates
                    .iter()
                    .map(|c| self.encode(tape, c))
                    .collect::<Result<Vec<_>>>()?;
                (hp, hq, has)
            }
            Inputs::Hidden {
                passage,
                question,
                candidates,
            } => {
                let hp = self.hidden_leaf(tape, passage)?;
                let hq = self.hidden_leaf(tape, question)?;
                let has = candidates
                    .iter()
                    .map(|c| self.hidden_leaf(tape, c))
                    .collect::<Result<Vec<_>>>()?;
                (hp, hq, has)
            }
        };

        let cfg = &self.config.matching;
        let pq_nodes =
            PairNodes::register(tape, &self.params.pq, pair_param_ids(Pair::PassageQuestion));
        let (pa_nodes, qa_nodes) = if cfg.share_pair_params {
            (pq_nodes, pq_nodes)
        } else {
            (
                PairNodes::register(tape, &self.params.pa, pair_param_ids(Pair::PassageAnswer)),
                PairNodes::register(tape, &self.params.qa, pair_param_ids(Pair::QuestionAnswer)),
            )
        };
        let v = tape.param(V_PARAM, &self.params.v.to_row());

        let pq =
            graph::pair_representation(tape, Pair::PassageQuestion, hp, hq, &pq_nodes, cfg, mode)?
                .fused
                .out;
        let mut candidates = Vec::with_capacity(has.len());
        for &ha in &has {
            let pa = graph::pair_representation(
                tape,
                Pair::PassageAnswer,
                hp,
                ha,
                &pa_nodes,
                cfg,
                mode,
            )?
            .fused
            .out;
            let qa = if cfg.use_qa_pair {
                Some(
                    graph::pair_representation(
                        tape,
                        Pair::QuestionAnswer,
                        hq,
                        ha,
                        &qa_nodes,
                        cfg,
                        mode,
                    )?
                    .fused
                    .out,
                )
            } else {
                None
            };
            let mut parts = vec![pq, pa];
            parts.extend(qa);
            let c = tape.concat_cols(&parts)?;
            candidates.push(CandidateNodes {
                passage_question: pq,
                passage_answer: pa,
                question_answer: qa,
                c,
            });
        }
        let shared = tape.value(pq).cols();
        let v_tail = tape.slice_cols(v, shared, self.params.v.len())?;
        let tails = candidates
            .iter()
            .map(|c| {
                let mut parts = vec![c.passage_answer];
                parts.extend(c.question_answer);
                tape.concat_cols(&parts)
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = graph::score_candidates(tape, &tails, v_tail, ex.gold)?;
        Ok(Forward { loss, candidates })
    }

    /// Loss, candidate probabilities, and parameter gradients of one example.
    pub fn loss_and_grads(
        &self,
        ex: &PreparedExample,
        mode: &mut Mode<'_>,
    ) -> Result<(f64, Vector, Gradients)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, ex, mode)?;
        let grads = tape.backward(fwd.loss)?;
        let probs = Vector::from(tape.softmax_probs(fwd.loss).expect("loss node").to_vec());
        Ok((tape.value(fwd.loss).get(0, 0), probs, grads))
    }

    /// Loss and probabilities with dropout off.
    pub fn evaluate_example(&self, ex: &PreparedExample) -> Result<(f64, Vector)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, ex, &mut Mode::Eval)?;
        let probs = Vector::from(tape.softmax_probs(fwd.loss).expect("loss node").to_vec());
        Ok((tape.value(fwd.loss).get(0, 0), probs))
    }

    /// Triplet representations of every candidate, dropout off.
    pub fn represent(&self, ex: &PreparedExample) -> Result<Vec<TripletRepresentation>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, ex, &mut Mode::Eval)?;
        let vec_of = |id: NodeId| Vector::from(tape.value(id).data().to_vec());
        Ok(fwd
            .candidates
            .iter()
            .map(|c| TripletRepresentation {
                passage_question: vec_of(c.passage_question),
                passage_answer: vec_of(c.passage_answer),
                question_answer: c.question_answer.map(vec_of),
                c: vec_of(c.c),
            })
            .collect())
    }

    /// Ids of the tensors this model trains, in numbering order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(NUM_PARAMS);
        if self.embeddings.is_some() {
            ids.push(EMBEDDING_PARAM);
        }
        ids.extend((1..19).map(ParamId));
        ids.push(V_PARAM);
        ids
    }

    pub fn param_shape(&self, id: ParamId) -> Option<(usize, usize)> {
        let l = self.config.hidden;
        match id.0 {
            0 => self.embeddings.as_ref().map(|t| t.weights.shape()),
            19 => Some((1, self.params.v.len())),
            n @ 1..=18 => Some(if (n - 1) % 6 == 5 { (1, l) } else { (l, l) }),
            _ => None,
        }
    }

    pub fn param_slice(&self, id: ParamId) -> Option<&[f64]> {
        match id.0 {
            0 => self.embeddings.as_ref().map(|t| t.weights.data()),
            19 => Some(self.params.v.as_slice()),
            n @ 1..=18 => Some(self.params.pair(Pair::ALL[(n - 1) / 6]).fields()[(n - 1) % 6]),
            _ => None,
        }
    }

    pub fn param_slice_mut(&mut self, id: ParamId) -> Option<&mut [f64]> {
        match id.0 {
            0 => self.embeddings.as_mut().map(|t| t.weights.data_mut()),
            19 => Some(self.params.v.as_mut_slice()),
            n @ 1..=18 => {
                let [a, b, c, d, e, f] = self.params.pair_mut(Pair::ALL[(n - 1) / 6]).fields_mut();
                Some([a, b, c, d, e, f].into_iter().nth((n - 1) % 6).unwrap())
            }
            _ => None,
        }
    }

    /// Mutable views of every trained tensor, in numbering order.
    pub fn param_slices_mut(&mut self) -> Vec<(ParamId, &mut [f64])> {
        let mut out = Vec::with_capacity(NUM_PARAMS);
        if let Some(t) = self.embeddings.as_mut() {
            out.push((EMBEDDING_PARAM, t.weights.data_mut()));
        }
        let MatchParameters { pq, pa, qa, v } = &mut self.params;
        for (pair, pp) in [
            (Pair::PassageQuestion, pq),
            (Pair::PassageAnswer, pa),
            (Pair::QuestionAnswer, qa),
        ] {
            out.extend(pair_param_ids(pair).into_iter().zip(pp.fields_mut()));
        }
        out.push((V_PARAM, v.as_mut_slice()));
        out
    }

    /// Named copies of every trained tensor.
    pub fn parameters(&self) -> Vec<(ParamId, String, Matrix)> {
        self.param_ids()
            .into_iter()
            .map(|id| {
                let (r, c) = self.param_shape(id).expect("known id");
                let m = Matrix::from_vec(r, c, self.param_slice(id).expect("known id").to_vec())
                    .expect("shape");
                (id, param_name(id), m)
            })
            .collect()
    }

    pub fn set_parameter(&mut self, id: ParamId, value: &Matrix) -> Result<()> {
        let shape = self
            .param_shape(id)
            .ok_or_else(|| Error::Config(format!("unknown parameter id {}", id.0)))?;
        if value.shape() != shape {
            return Err(Error::shape(
                "set_parameter",
                format!(
                    "{} expects {shape:?}, got {:?}",
                    param_name(id),
                    value.shape()
                ),
            ));
        }
        self.param_slice_mut(id)
            .expect("known id")
            .copy_from_slice(value.data());
        Ok(())
    }

    /// Gradients as dense matrices in [`param_ids`](Self::param_ids) order;
    /// tensors absent from `grads` get zeros.
    pub fn dense_gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        self.param_ids()
            .into_iter()
            .map(|id| {
                grads.get(id).cloned().unwrap_or_else(|| {
                    let (r, c) = self.param_shape(id).expect("known id");
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}
