//! Critique representation, the GRU blender, synthetic critiquing datasets
//! and blender training.

mod blend;
mod synthetic;
mod train;
mod types;

pub use blend::{
    encode_critique, example_loss, margin_loss, margin_loss_grad, uac_blend, BlendCell, BlendParams,
    CritiqueSession, PreparedExample, TurnRecord,
};
pub use synthetic::{
    build_synthetic_datasets, build_synthetic_datasets_for, partition_items, predicted_keyphrases, read_examples_jsonl, write_examples_jsonl,
    CritiqueExample, SkipReport, SyntheticConfig, SyntheticDatasets,
};
pub use train::{
    blender_objective, fit_prepared, train_blender, BlenderConfig, BlenderEpoch, BlenderLog, ExamplePreparer,
};
pub use types::{Critique, CritiqueMode, Polarity};
