//! Review ingestion, rating binarization, per-user splits and the
//! interaction/keyphrase matrices.

mod dataset;
mod load;

pub use dataset::{
    binarize, build_dataset, dataset_stats, BuildConfig, BuildReport, DatasetStats, Interaction,
    InteractionData, Split, SplitRatios, SparseBinary,
};
pub use load::{load_interactions, normalize_keyphrase, parse_interactions, InputFormat, RawInteraction};
