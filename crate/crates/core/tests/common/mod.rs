#![allow(dead_code)]

use mmsvae_core::dataio::{build_dataset, InteractionData, RawInteraction, SplitRatios};
use mmsvae_core::model::{train, ModelDims, ModelParams, ModelVariant, TrainConfig};
use mmsvae_core::synth::{generate, SynthConfig};

pub fn corpus(users: usize, items: usize, keyphrases: usize, seed: u64) -> Vec<RawInteraction> {
    let cfg = SynthConfig {
        users,
        items,
        keyphrases,
        positives_per_user: 12,
        seed,
        ..SynthConfig::default()
    };
    generate(&cfg).expect("synth").0
}

pub fn toy(users: usize, items: usize, keyphrases: usize, seed: u64) -> InteractionData {
    build_dataset(
        &corpus(users, items, keyphrases, seed),
        3.5,
        SplitRatios::parse("0.6,0.2,0.2").unwrap(),
        seed,
    )
    .expect("dataset")
}

/// A few quick epochs: enough for the model to carry signal, cheap enough
/// for unit-scale tests.
pub fn trained(data: &InteractionData, variant: ModelVariant, seed: u64) -> ModelParams {
    let dims = ModelDims::new(data.n_items(), data.n_keyphrases(), 8);
    let mut params = ModelParams::init(variant, dims, seed).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 8,
        batch_size: 16,
        anneal_steps: Some(20),
        seed,
        ..TrainConfig::default()
    };
    train(&mut params, data, &cfg).unwrap();
    params
}
