//! Text spans to hidden matrices `H ∈ R^{|S| x l}`.
//!
//! Two encoders share one contract: a trainable lookup table, and a frozen
//! store of matrices computed elsewhere (for example by a pretrained model).

mod store;
mod vocab;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use store::{
    load_precomputed, EmbeddingStore, Role, STORE_EXTENSION, STORE_MAGIC, STORE_VERSION,
};
pub use vocab::{
    split_tokens, synthetic_token, tokenize, TokenSequence, Vocabulary, PAD_ID, UNK_ID,
};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, NodeId, ParamId, Tape};

pub const EMBEDDING_INIT_BOUND: f64 = 0.1;

/// Learnable `vocab_size x l` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub weights: Matrix,
}

impl EmbeddingTable {
    /// Uniform in [-0.1, 0.1].
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, hidden: usize, rng: &mut R) -> Self {
        EmbeddingTable {
            weights: Matrix::random_uniform(vocab_size, hidden, EMBEDDING_INIT_BOUND, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn hidden(&self) -> usize {
        self.weights.cols()
    }
}

/// Rows `tokens.ids` of the table.
pub fn encode_lookup(tokens: &TokenSequence, table: &EmbeddingTable) -> Result<Matrix> {
    let mut tape = Tape::new();
    let id = encode_lookup_on(&mut tape, ParamId(0), tokens, table)?;
    Ok(tape.value(id).clone())
}

/// Gradient-traceable lookup; gradients land on `param`.
pub fn encode_lookup_on(
    tape: &mut Tape,
    param: ParamId,
    tokens: &TokenSequence,
    table: &EmbeddingTable,
) -> Result<NodeId> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence("encode_lookup"));
    }
    tape.gather(param, &table.weights, &tokens.ids)
}

/// Hidden matrices for one (passage, question, candidate) triplet.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTriplet {
    pub passage: Matrix,
    pub question: Matrix,
    pub answer: Matrix,
}

impl EncodedTriplet {
    pub fn new(passage: Matrix, question: Matrix, answer: Matrix) -> Result<Self> {
        let t = EncodedTriplet {
            passage,
            question,
            answer,
        };
        t.hidden()?;
        Ok(t)
    }

    /// Shared hidden size; errors if the three disagree or any is empty.
    pub fn hidden(&self) -> Result<usize> {
        let l = self.passage.cols();
        for (name, m) in [
            ("passage", &self.passage),
            ("question", &self.question),
            ("answer", &self.answer),
        ] {
            if m.rows() == 0 {
                return Err(Error::EmptySequence("EncodedTriplet"));
            }
            if m.cols() != l {
                return Err(Error::shape(
                    "EncodedTriplet",
                    format!("{name} has hidden size {}, passage has {l}", m.cols()),
                ));
            }
        }
        Ok(l)
    }
}
