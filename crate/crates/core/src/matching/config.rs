use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the attention weights of the two matching directions are normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionNorm {
    /// Independent row softmax per direction:
    /// `E^u = softmax(Hu W Hv^T) Hv`, `E^v = softmax(Hv W^T Hu^T) Hu`.
    Dual,
    /// One row softmax shared by both directions:
    /// `G = softmax(Hu W Hv^T)`, `E^u = G Hv`, `E^v = G^T Hu`.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Bidirectional,
    /// Keeps only `S^u`, the first-sequence-aware side.
    Unidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// `g = σ(M^u W3 + M^v W4 + b)`, `out = g ⊙ M^u + (1 - g) ⊙ M^v`.
    Gated,
    /// `out = [M^u; M^v]`.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub attention: AttentionNorm,
    pub direction: Direction,
    pub fusion: Fusion,
    /// Include the question-answer pair in the triplet representation.
    pub use_qa_pair: bool,
    /// Use the passage-question weights for all three pairs.
    pub share_pair_params: bool,
    /// Dropout rate on `S^u`, `S^v` during training.
    pub matching_dropout: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            attention: AttentionNorm::Dual,
            direction: Direction::Bidirectional,
            fusion: Fusion::Gated,
            use_qa_pair: true,
            share_pair_params: false,
            matching_dropout: 0.3,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.matching_dropout) {
            return Err(Error::Config(format!(
                "matching dropout {} outside [0, 1)",
                self.matching_dropout
            )));
        }
        Ok(())
    }

    pub fn num_pairs(&self) -> usize {
        if self.use_qa_pair {
            3
        } else {
            2
        }
    }

    /// Length of one fused pair vector for hidden size `hidden`.
    pub fn pair_output_len(&self, hidden: usize) -> usize {
        match (self.direction, self.fusion) {
            (Direction::Bidirectional, Fusion::Concat) => 2 * hidden,
            _ => hidden,
        }
    }

    /// Length of `C` and therefore of `V`.
    pub fn representation_len(&self, hidden: usize) -> usize {
        self.num_pairs() * self.pair_output_len(hidden)
    }

    pub fn is_bidirectional(&self) -> bool {
        self.direction == Direction::Bidirectional
    }
}
