//! Synthetic multi-choice task.
//!
//! Token ids `2..vocab_size` are split into a key pool (the first third) and
//! a filler pool. Each passage holds a key phrase of `answer_len` distinct
//! key tokens at a random position, `answer_len` further decoy key tokens at
//! random positions, and distinct filler tokens elsewhere. The correct
//! candidate is the key phrase in shuffled order. Each distractor takes
//! `round(distractor_overlap * answer_len)` decoys from the passage and fills
//! the rest with key tokens absent from the passage, so every candidate is
//! made of key tokens and only passage membership tells them apart. The
//! question is random filler. Texts are space-joined `w<id>` tokens.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{synthetic_token, Vocabulary};
use crate::error::{Error, Result};
use crate::interface::MultiChoiceExample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTaskSpec {
    pub vocab_size: usize,
    pub num_candidates: usize,
    pub passage_len: usize,
    pub answer_len: usize,
    pub question_len: usize,
    /// Fraction of each distractor drawn from the passage, in [0, 1].
    pub distractor_overlap: f64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        SynthTaskSpec {
            vocab_size: 64,
            num_candidates: 4,
            passage_len: 16,
            answer_len: 4,
            question_len: 3,
            distractor_overlap: 0.5,
            train_size: 2000,
            dev_size: 500,
            test_size: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDatasets {
    pub train: Vec<MultiChoiceExample>,
    pub dev: Vec<MultiChoiceExample>,
    pub test: Vec<MultiChoiceExample>,
}

impl SynthTaskSpec {
    fn key_pool(&self) -> std::ops::Range<usize> {
        let usable = self.vocab_size.saturating_sub(2);
        2..2 + usable / 3
    }

    fn filler_pool(&self) -> std::ops::Range<usize> {
        self.key_pool().end..self.vocab_size
    }

    fn overlap_count(&self) -> usize {
        (self.distractor_overlap * self.answer_len as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_candidates < 2 {
            return bad(format!(
                "need at least 2 candidates, got {}",
                self.num_candidates
            ));
        }
        if self.passage_len == 0 || self.answer_len == 0 || self.question_len == 0 {
            return bad("sequence lengths must be at least 1".into());
        }
        if self.answer_len > self.passage_len {
            return bad(format!(
                "answer_len {} exceeds passage_len {}",
                self.answer_len, self.passage_len
            ));
        }
        if !(0.0..=1.0).contains(&self.distractor_overlap) {
            return bad(format!(
                "distractor_overlap {} outside [0, 1]",
                self.distractor_overlap
            ));
        }
        if 2 * self.answer_len > self.passage_len {
            return bad(format!(
                "passage_len {} cannot hold a key phrase and decoys of answer_len {}",
                self.passage_len, self.answer_len
            ));
        }
        let keys = self.key_pool().len();
        let absent = self.answer_len - self.overlap_count();
        if keys < 2 * self.answer_len + absent {
            return bad(format!(
                "vocab_size {} leaves {keys} key tokens, too few for answer_len {}",
                self.vocab_size, self.answer_len
            ));
        }
        let fillers = self.filler_pool().len();
        if fillers < (self.passage_len - 2 * self.answer_len).max(1) {
            return bad(format!(
                "vocab_size {} leaves {fillers} filler tokens, too few for the passage",
                self.vocab_size
            ));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::synthetic(self.vocab_size)
    }
}

fn text(ids: &[usize]) -> String {
    ids.iter()
        .map(|&i| synthetic_token(i))
        .collect::<Vec<_>>()
        .join(" ")
}

fn example<R: Rng>(spec: &SynthTaskSpec, id: String, rng: &mut R) -> MultiChoiceExample {
    let keys: Vec<usize> = spec.key_pool().collect();
    let fillers: Vec<usize> = spec.filler_pool().collect();
    let a = spec.answer_len;

    let mut chosen: Vec<usize> = keys.choose_multiple(rng, 2 * a).copied().collect();
    let decoys = chosen.split_off(a);
    let phrase = chosen;
    let mut others: Vec<usize> = fillers
        .choose_multiple(rng, spec.passage_len - 2 * a)
        .copied()
        .collect();
    others.extend(&decoys);
    others.shuffle(rng);
    let at = rng.gen_range(0..=others.len());
    let mut passage = others[..at].to_vec();
    passage.extend(&phrase);
    passage.extend(&others[at..]);

    let question: Vec<usize> = (0..spec.question_len)
        .map(|_| *fillers.choose(rng).unwrap())
        .collect();

    let absent_keys: Vec<usize> = keys
        .iter()
        .copied()
        .filter(|k| !passage.contains(k))
        .collect();
    let n_overlap = spec.overlap_count();
    let gold = rng.gen_range(0..spec.num_candidates);
    let mut candidates = Vec::with_capacity(spec.num_candidates);
    for i in 0..spec.num_candidates {
        let mut toks = if i == gold {
            phrase.clone()
        } else {
            let mut d: Vec<usize> = decoys.choose_multiple(rng, n_overlap).copied().collect();
            d.extend(absent_keys.choose_multiple(rng, a - n_overlap));
            d
        };
        toks.shuffle(rng);
        candidates.push(text(&toks));
    }
    MultiChoiceExample {
        id,
        passage: text(&passage),
        question: text(&question),
        candidates,
        gold,
    }
}

/// Train, dev and test splits, fully determined by `spec.seed`.
pub fn generate_synthetic(spec: &SynthTaskSpec) -> Result<SynthDatasets> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = |name: &str, n: usize| -> Vec<MultiChoiceExample> {
        (0..n)
            .map(|i| example(spec, format!("synth-{name}-{i:06}"), &mut rng))
            .collect()
    };
    let train = split("train", spec.train_size);
    let dev = split("dev", spec.dev_size);
    let test = split("test", spec.test_size);
    Ok(SynthDatasets { train, dev, test })
}
