//! Dual co-matching network (DMN) for multi-choice reading comprehension.
//!
//! Every (passage, question, candidate) triplet is encoded into three hidden
//! matrices, each sequence pair is matched in both directions, the two pooled
//! directions are merged through a sigmoid gate, and the concatenated pair
//! vectors are scored against each other with a softmax over candidates.
//!
//! ```text
//! P, Q, A_i --encoder--> H^p, H^q, H^a
//!   (p,q) (p,a) (q,a) --bidirectional match--> S^u, S^v
//!                     --max pool + gate------> M^{pair}
//!   C_i = [M^{pq}; M^{pa}; M^{qa}]  --V^T C_i--> softmax over i
//! ```
//!
//! The crate carries its own dense f64 kernels and a define-by-run
//! reverse-mode tape ([`numerics`]), so gradients of the whole stack can be
//! checked against central differences.

pub mod encoder;
pub mod error;
pub mod harness;
pub mod interface;
pub mod matching;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
