use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MatchConfig;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Which two sequences a pair relates. The first is the `u` side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pair {
    PassageQuestion,
    PassageAnswer,
    QuestionAnswer,
}

impl Pair {
    pub const ALL: [Pair; 3] = [
        Pair::PassageQuestion,
        Pair::PassageAnswer,
        Pair::QuestionAnswer,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Pair::PassageQuestion => "pq",
            Pair::PassageAnswer => "pa",
            Pair::QuestionAnswer => "qa",
        }
    }
}

/// Weights of one matching pair: `W` (attention), `W1`/`W2` (projections
/// of the two attended sides), `W3`/`W4`/`b` (gate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairParameters {
    pub w: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    pub w4: Matrix,
    pub b: Vector,
}

pub const PAIR_FIELDS: [&str; 6] = ["w", "w1", "w2", "w3", "w4", "b"];

impl PairParameters {
    /// `W` is the identity plus uniform ±1/sqrt(l) noise; `W1`..`W4` are
    /// uniform in ±1/sqrt(l); the gate bias is zero.
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = Matrix::identity(hidden)
            .add(&Matrix::random_uniform(hidden, hidden, bound, rng))
            .expect("same shape");
        PairParameters {
            w,
            w1: Matrix::random_uniform(hidden, hidden, bound, rng),
            w2: Matrix::random_uniform(hidden, hidden, bound, rng),
            w3: Matrix::random_uniform(hidden, hidden, bound, rng),
            w4: Matrix::random_uniform(hidden, hidden, bound, rng),
            b: Vector::zeros(hidden),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        PairParameters {
            w: Matrix::zeros(hidden, hidden),
            w1: Matrix::zeros(hidden, hidden),
            w2: Matrix::zeros(hidden, hidden),
            w3: Matrix::zeros(hidden, hidden),
            w4: Matrix::zeros(hidden, hidden),
            b: Vector::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    /// Parameters with `W -> W^T` and `W1 <-> W2`: matching `(v, u)` with
    /// these equals matching `(u, v)` with the originals, sides swapped.
    pub fn swapped(&self) -> Self {
        PairParameters {
            w: self.w.transpose(),
            w1: self.w2.clone(),
            w2: self.w1.clone(),
            w3: self.w3.clone(),
            w4: self.w4.clone(),
            b: self.b.clone(),
        }
    }

    pub fn validate(&self, hidden: usize) -> Result<()> {
        for (name, m) in [
            ("w", &self.w),
            ("w1", &self.w1),
            ("w2", &self.w2),
            ("w3", &self.w3),
            ("w4", &self.w4),
        ] {
            if m.shape() != (hidden, hidden) {
                return Err(Error::shape(
                    "PairParameters",
                    format!("{name} is {:?}, expected {hidden}x{hidden}", m.shape()),
                ));
            }
        }
        if self.b.len() != hidden {
            return Err(Error::shape(
                "PairParameters",
                format!("b has length {}, expected {hidden}", self.b.len()),
            ));
        }
        Ok(())
    }

    /// Field views in [`PAIR_FIELDS`] order.
    pub fn fields(&self) -> [&[f64]; 6] {
        [
            self.w.data(),
            self.w1.data(),
            self.w2.data(),
            self.w3.data(),
            self.w4.data(),
            self.b.as_slice(),
        ]
    }

    pub fn fields_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w.data_mut(),
            self.w1.data_mut(),
            self.w2.data_mut(),
            self.w3.data_mut(),
            self.w4.data_mut(),
            self.b.as_mut_slice(),
        ]
    }
}

/// All matching and classification weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchParameters {
    pub pq: PairParameters,
    pub pa: PairParameters,
    pub qa: PairParameters,
    /// Candidate scorer, same length as `C`.
    pub v: Vector,
}

impl MatchParameters {
    /// Random pair weights and a zero scorer, so an untrained model is
    /// indifferent between candidates.
    pub fn init<R: Rng + ?Sized>(hidden: usize, cfg: &MatchConfig, rng: &mut R) -> Self {
        MatchParameters {
            pq: PairParameters::init(hidden, rng),
            pa: PairParameters::init(hidden, rng),
            qa: PairParameters::init(hidden, rng),
            v: Vector::zeros(cfg.representation_len(hidden)),
        }
    }

    pub fn pair(&self, pair: Pair) -> &PairParameters {
        match pair {
            Pair::PassageQuestion => &self.pq,
            Pair::PassageAnswer => &self.pa,
            Pair::QuestionAnswer => &self.qa,
        }
    }

    pub fn pair_mut(&mut self, pair: Pair) -> &mut PairParameters {
        match pair {
            Pair::PassageQuestion => &mut self.pq,
            Pair::PassageAnswer => &mut self.pa,
            Pair::QuestionAnswer => &mut self.qa,
        }
    }

    pub fn hidden(&self) -> usize {
        self.pq.hidden()
    }

    pub fn validate(&self, hidden: usize, cfg: &MatchConfig) -> Result<()> {
        for p in Pair::ALL {
            self.pair(p).validate(hidden)?;
        }
        let want = cfg.representation_len(hidden);
        if self.v.len() != want {
            return Err(Error::shape(
                "MatchParameters",
                format!("V has length {}, configuration needs {want}", self.v.len()),
            ));
        }
        Ok(())
    }
}
