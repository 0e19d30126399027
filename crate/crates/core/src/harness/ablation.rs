//! Ablation runner: trains each matching variant over several seeds and
//! reports accuracy against the full model.

use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::train::{train, TrainConfig};
use crate::encoder::{EmbeddingStore, Vocabulary};
use crate::error::{Error, Result};
use crate::interface::MultiChoiceExample;
use crate::matching::{AttentionNorm, Direction, Fusion, MatchConfig};
use crate::model::{Model, ModelConfig};

/// Published accuracy drops (points, RACE, large pretrained encoder) for
/// unidirectional matching, concatenation instead of gating, and no q-a pair.
pub const REFERENCE_DELTAS: [(&str, f64); 3] =
    [("unidirectional", -1.5), ("concat", -0.5), ("no-qa", -0.4)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub matching: MatchConfig,
}

/// Full model plus the three single-change variants, all derived from `base`.
pub fn standard_variants(base: &MatchConfig) -> Vec<AblationVariant> {
    let full = MatchConfig {
        direction: Direction::Bidirectional,
        fusion: Fusion::Gated,
        use_qa_pair: true,
        ..*base
    };
    let v = |name: &str, matching| AblationVariant {
        name: name.into(),
        matching,
    };
    vec![
        v("full", full),
        v(
            "unidirectional",
            MatchConfig {
                direction: Direction::Unidirectional,
                ..full
            },
        ),
        v(
            "concat",
            MatchConfig {
                fusion: Fusion::Concat,
                ..full
            },
        ),
        v(
            "no-qa",
            MatchConfig {
                use_qa_pair: false,
                ..full
            },
        ),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationOptions {
    pub seeds: usize,
    /// Seed k uses `base_seed + k` for both initialization and shuffling.
    pub base_seed: u64,
    /// Adds the full model with single-softmax attention as a fifth row.
    pub include_literal: bool,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            seeds: 5,
            base_seed: 0,
            include_literal: false,
        }
    }
}

pub struct AblationData<'a> {
    pub vocab: &'a Vocabulary,
    pub train: &'a [MultiChoiceExample],
    pub dev: &'a [MultiChoiceExample],
    /// Scored split; falls back to `dev` when empty.
    pub test: &'a [MultiChoiceExample],
    pub store: Option<&'a EmbeddingStore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub matching: MatchConfig,
    pub representation_len: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub stdev: f64,
    /// Mean of per-seed `accuracy - full accuracy`, in points.
    pub delta_points: f64,
    /// Sample stdev of the per-seed differences, in points.
    pub delta_stdev_points: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub hidden: usize,
    pub scored_split: String,
    pub scored_examples: usize,
    pub variants: Vec<VariantResult>,
    pub reference_deltas_points: Vec<(String, f64)>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_stdev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn run_ablation_suite(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &AblationData<'_>,
    opts: &AblationOptions,
) -> Result<AblationReport> {
    if opts.seeds == 0 {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let (scored, scored_split) = if data.test.is_empty() {
        (data.dev, "dev")
    } else {
        (data.test, "test")
    };
    if scored.is_empty() {
        return Err(Error::Config("ablation needs a dev or test split".into()));
    }
    let mut variants = standard_variants(&base.matching);
    if opts.include_literal {
        let literal = MatchConfig {
            attention: AttentionNorm::Literal,
            ..variants[0].matching
        };
        variants.push(AblationVariant {
            name: "literal-attention".into(),
            matching: literal,
        });
    }
    let seeds: Vec<u64> = (0..opts.seeds as u64).map(|k| opts.base_seed + k).collect();

    let mut results: Vec<VariantResult> = Vec::with_capacity(variants.len());
    for variant in &variants {
        let config = ModelConfig {
            matching: variant.matching,
            ..*base
        };
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let model = Model::new(config, data.vocab.clone(), seed)?;
            let train_set = model.prepare_all(data.train, data.store)?;
            let dev_set = model.prepare_all(data.dev, data.store)?;
            let cfg = TrainConfig { seed, ..*train_cfg };
            let outcome = train(model, &train_set, &dev_set, &cfg, |_| {})?;
            let scored_set = outcome.model.prepare_all(scored, data.store)?;
            let acc = evaluate(&outcome.model, &scored_set)?.accuracy;
            info!("ablation {} seed {seed}: accuracy {acc:.4}", variant.name);
            accuracies.push(acc);
        }
        let (delta_points, delta_stdev_points) = match results.first() {
            None => (0.0, 0.0),
            Some(full) => {
                let diffs: Vec<f64> = accuracies
                    .iter()
                    .zip(&full.accuracies)
                    .map(|(a, f)| 100.0 * (a - f))
                    .collect();
                (mean(&diffs), sample_stdev(&diffs))
            }
        };
        results.push(VariantResult {
            name: variant.name.clone(),
            matching: variant.matching,
            representation_len: variant.matching.representation_len(base.hidden),
            mean: mean(&accuracies),
            stdev: sample_stdev(&accuracies),
            accuracies,
            delta_points,
            delta_stdev_points,
        });
    }

    Ok(AblationReport {
        seeds,
        hidden: base.hidden,
        scored_split: scored_split.into(),
        scored_examples: scored.len(),
        variants: results,
        reference_deltas_points: REFERENCE_DELTAS
            .iter()
            .map(|(n, d)| (n.to_string(), *d))
            .collect(),
    })
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Ablation over {} seed(s), hidden {}, scored on {} ({} examples)",
            self.seeds.len(),
            self.hidden,
            self.scored_split,
            self.scored_examples
        );
        let _ = writeln!(
            s,
            "{:<18} {:>6} {:>17} {:>19}",
            "variant", "len(C)", "accuracy (%)", "delta vs full (pt)"
        );
        for v in &self.variants {
            let acc = format!("{:.2} ± {:.2}", 100.0 * v.mean, 100.0 * v.stdev);
            let delta = if v.name == "full" {
                "-".to_string()
            } else {
                format!("{:+.2} ± {:.2}", v.delta_points, v.delta_stdev_points)
            };
            let _ = writeln!(
                s,
                "{:<18} {:>6} {:>17} {:>19}",
                v.name, v.representation_len, acc, delta
            );
        }
        let refs: Vec<String> = self
            .reference_deltas_points
            .iter()
            .map(|(n, d)| format!("{n} {d:+.1}"))
            .collect();
        let _ = writeln!(
            s,
            "* Published reference deltas (RACE, large pretrained encoder, points): {}. Shown for comparison only; not reproduced here.",
            refs.join(", ")
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
