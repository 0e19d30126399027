//! Training, evaluation, synthetic data and ablations.

pub mod ablation;
pub mod adam;
pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod train;

pub use ablation::{
    run_ablation_suite, standard_variants, AblationData, AblationOptions, AblationReport,
    VariantResult,
};
pub use adam::{adam_step, OptimizerState, Schedule, StepOutcome};
pub use eval::{argmax, evaluate, Evaluation, Prediction};
pub use gradcheck::{model_gradient_check, random_gradcheck_case};
pub use synth::{generate_synthetic, SynthDatasets, SynthTaskSpec};
pub use train::{
    batch_gradients, train, EpochMetrics, TrainConfig, TrainOutcome, FINE_TUNE_LEARNING_RATE,
};
