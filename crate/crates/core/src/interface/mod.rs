//! Dataset ingestion and model persistence.

mod bundle;
mod dataset;

pub use bundle::{
    decode_bundle, encode_bundle, load_model, save_model, ModelBundle, BUNDLE_MAGIC, BUNDLE_VERSION,
};
pub use dataset::{
    answer_index, read_jsonl, read_race_dir, write_jsonl, JsonlRead, LineError, MultiChoiceExample,
    RaceCorpus, RACE_OPTIONS,
};
