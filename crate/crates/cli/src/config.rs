//! Flat JSON run configuration and its merge with command-line flags.
//!
//! Every tunable is an optional flag and an optional key of the config file;
//! a flag beats the file, the file beats the built-in default.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Declares a flag group: an `Args` struct of optional fields plus a merge
/// with the same-named keys of [`RunConfig`].
macro_rules! flag_group {
    ($(#[$sm:meta])* $name:ident { $( $(#[$fm:meta])* $field:ident : $ty:ty ),* $(,)? }) => {
        $(#[$sm])*
        #[derive(Args, Clone, Debug, Default)]
        pub struct $name {
            $( $(#[$fm])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            pub fn merged(self, file: &RunConfig) -> Self {
                $name { $( $field: self.$field.or_else(|| file.$field.clone()), )* }
            }
        }
    };
}

/// Contents of `--config`. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub format: Option<String>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub blender: Option<PathBuf>,
    pub critiques: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,

    pub threshold: Option<f64>,
    pub ratios: Option<String>,

    pub users: Option<usize>,
    pub items: Option<usize>,
    pub keyphrases: Option<usize>,
    pub clusters: Option<usize>,

    pub variant: Option<String>,
    pub latent_dim: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta_max: Option<f64>,
    pub anneal_steps: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub patience: Option<usize>,
    pub eval_k: Option<usize>,

    pub cap_affected: Option<usize>,
    pub cap_unaffected: Option<usize>,
    pub explain_top: Option<usize>,

    pub mode: Option<String>,
    pub blender_learning_rate: Option<f64>,
    pub blender_epochs: Option<usize>,
    pub blender_batch_size: Option<usize>,
    pub margin: Option<f64>,

    pub split: Option<String>,
    pub k: Option<usize>,

    pub baseline: Option<String>,
    pub polarity: Option<String>,
    pub strategy: Option<String>,
    pub top_n: Option<usize>,
    pub max_turns: Option<usize>,
    pub negatives: Option<usize>,
    pub confidence: Option<f64>,

    pub port: Option<u16>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())).into())
    }
}

flag_group!(
    /// Shared by every command.
    Common {
        /// Output file or directory.
        out: PathBuf,
        /// Seed for every random choice of the command [default: 0].
        seed: u64,
    }
);

flag_group!(
    SynthFlags {
        /// Users in the generated corpus [default: 200].
        users: usize,
        /// Items [default: 100].
        items: usize,
        /// Keyphrase vocabulary size [default: 20].
        keyphrases: usize,
        /// Latent clusters [default: 2].
        clusters: usize,
    }
);

flag_group!(
    PrepareFlags {
        /// Review corpus (JSONL or CSV).
        input: PathBuf,
        /// jsonl or csv [default: from the file extension].
        format: String,
        /// Ratings strictly above this count as positive [default: 3.5].
        threshold: f64,
        /// Train, validation and test fractions [default: 0.6,0.2,0.2].
        ratios: String,
    }
);

flag_group!(
    DataFlag {
        /// Dataset bundle written by `prepare`.
        data: PathBuf,
    }
);

flag_group!(
    ModelFlag {
        /// Model checkpoint.
        model: PathBuf,
    }
);

flag_group!(
    TrainFlags {
        /// mms, mms3 or mmsplus [default: mmsplus].
        variant: String,
        /// Latent size |H| [default: 64].
        latent_dim: usize,
        /// Adam step size [default: 5e-5].
        learning_rate: f64,
        /// Final KL weight [default: 0.2].
        beta_max: f64,
        /// Steps of linear KL warm-up [default: one epoch of batches].
        anneal_steps: u64,
        /// Maximum epochs [default: 100].
        epochs: usize,
        /// Users per batch [default: 64].
        batch_size: usize,
        /// Input dropout [default: 0.2].
        dropout_rate: f64,
        /// Epochs without validation improvement before stopping [default: 10].
        patience: usize,
        /// Cut-off of the validation NDCG [default: 10].
        eval_k: usize,
        /// Continue from this checkpoint (keeps its step counter).
        resume: PathBuf,
    }
);

flag_group!(
    CritiqueFlags {
        /// Max affected items kept per example [default: 100].
        cap_affected: usize,
        /// Max unaffected items kept per example [default: 100].
        cap_unaffected: usize,
        /// Predicted explanation size excluded from positive critiques [default: 10].
        explain_top: usize,
    }
);

flag_group!(
    BlenderFlags {
        /// Directory written by `build-critiques`.
        critiques: PathBuf,
        /// shared or split [default: shared for mms, split otherwise].
        mode: String,
        /// Adam step size of the blender [default: 1e-3].
        blender_learning_rate: f64,
        /// Blender epochs [default: 20].
        blender_epochs: usize,
        /// Examples per blender batch [default: 32].
        blender_batch_size: usize,
        /// Ranking margin h on item logits [default: 0.1].
        margin: f64,
    }
);

flag_group!(
    EvalFlags {
        /// train, val or test [default: test].
        split: String,
        /// Cut-off for NDCG, MAP, precision and recall [default: 10].
        k: usize,
    }
);

flag_group!(
    SimFlags {
        /// Blender checkpoint (required for the trained baseline).
        blender: PathBuf,
        /// trained, random, uac or identity [default: trained].
        baseline: String,
        /// positive or negative [default: negative].
        polarity: String,
        /// pop or diff [default: pop].
        strategy: String,
        /// Success once the target reaches this rank [default: 10].
        top_n: usize,
        /// Critique budget per session [default: 10].
        max_turns: usize,
        /// Unseen items sampled next to each target [default: 299].
        negatives: usize,
        /// Confidence level of the intervals [default: 0.95].
        confidence: f64,
        /// Blending mode of the random baseline [default: from the variant].
        mode: String,
    }
);

flag_group!(
    ServeFlags {
        /// Blender checkpoint [env: BLENDER_PATH].
        blender: PathBuf,
        /// Listening port [env: PORT, default: 8080].
        port: u16,
        /// Items per response [env: TOP_N, default: 10].
        top_n: usize,
        /// Critiques per session [env: MAX_TURNS, default: 10].
        max_turns: usize,
    }
);

pub fn require<T>(value: Option<T>, flag: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing --{flag} (flag or config key `{}`)", flag.replace('-', "_"))).into())
}

pub fn parse_value<T>(value: &str, what: &str) -> anyhow::Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| CliError::Validation(format!("{what}: {e}")).into())
}
