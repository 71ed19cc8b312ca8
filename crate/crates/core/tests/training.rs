mod common;

use mmsvae_core::checkpoint::file_hash;
use mmsvae_core::dataio::{dataset_stats, InteractionData, SplitRatios};
use mmsvae_core::evalsim::{evaluate_model, evaluate_popularity};
use mmsvae_core::model::{train, ModelDims, ModelParams, ModelVariant, TrainConfig};
use mmsvae_core::dataio::Split;
use mmsvae_core::Error;

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        epochs: 4,
        batch_size: 16,
        anneal_steps: Some(10),
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_reproducible_under_a_seed() {
    let data = common::toy(40, 30, 8, 1);
    let dims = ModelDims::new(data.n_items(), data.n_keyphrases(), 6);
    let fit = |seed| {
        let mut p = ModelParams::init(ModelVariant::MmsPlus, dims, seed).unwrap();
        let log = train(&mut p, &data, &config(seed)).unwrap();
        (p.store.value_hash(), log)
    };
    let (a, log_a) = fit(3);
    let (b, log_b) = fit(3);
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert_ne!(a, fit(4).0);
    assert_eq!(log_a.terms_per_user, 5);
    assert!(log_a.steps.windows(2).all(|w| w[0].step < w[1].step));
}

#[test]
fn checkpoints_round_trip_and_reject_the_wrong_variant() {
    let data = common::toy(30, 25, 8, 2);
    let dims = ModelDims::new(data.n_items(), data.n_keyphrases(), 4);
    let mut p = ModelParams::init(ModelVariant::Mms3, dims, 2).unwrap();
    train(&mut p, &data, &config(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    p.save(&a, serde_json::json!({ "note": "x" })).unwrap();
    let loaded = ModelParams::load(&a, Some(ModelVariant::Mms3)).unwrap();
    assert_eq!(loaded.step, p.step);
    assert_eq!(loaded.dims, p.dims);
    loaded.save(&b, serde_json::json!({ "note": "x" })).unwrap();
    assert_eq!(file_hash(&a).unwrap(), file_hash(&b).unwrap());

    assert!(matches!(
        ModelParams::load(&a, Some(ModelVariant::MmsPlus)),
        Err(Error::Checkpoint(_))
    ));
    let mut bytes = std::fs::read(&a).unwrap();
    bytes[0] = b'X';
    std::fs::write(&b, &bytes).unwrap();
    assert!(ModelParams::load(&b, None).is_err());
    std::fs::write(&b, &std::fs::read(&a).unwrap()[..20]).unwrap();
    assert!(ModelParams::load(&b, None).is_err());
}

#[test]
fn trained_model_beats_popularity_on_planted_clusters() {
    let data = common::toy(120, 60, 12, 5);
    let p = common::trained(&data, ModelVariant::MmsPlus, 5);
    let model = evaluate_model(&p, &data, Split::Val, 10).unwrap();
    let pop = evaluate_popularity(&data, Split::Val, 10).unwrap();
    assert!(model.recommendation.ndcg > pop.ndcg, "{} vs {}", model.recommendation.ndcg, pop.ndcg);
    let expl = model.explanation.expect("explanation metrics");
    for v in [expl.ndcg, expl.r_precision, expl.map_at_k, expl.precision_at_k, expl.recall_at_k] {
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn bundles_round_trip_and_report_stats() {
    let data = common::toy(30, 25, 8, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.json");
    data.save(&path).unwrap();
    let back = InteractionData::load(&path).unwrap();
    assert_eq!(back, data);
    let s = dataset_stats(&data);
    assert_eq!((s.users, s.items, s.keyphrases), (data.n_users(), data.n_items(), data.n_keyphrases()));
    assert_eq!(s.interactions, data.train.nnz() + data.val.nnz() + data.test.nnz());
    assert!((s.sparsity - (1.0 - s.interactions as f64 / (s.users * s.items) as f64)).abs() < 1e-15);
}

#[test]
fn split_ratios_are_validated() {
    assert!(SplitRatios::parse("0.6,0.2,0.2").is_ok());
    assert!(SplitRatios::parse("0.6,0.3,0.3").is_err());
    assert!(SplitRatios::parse("0.6,0.4").is_err());
    assert!(SplitRatios::parse("a,b,c").is_err());
}
