//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero
//! exit when any criterion fails. The Yelp statistics check runs only when
//! `MMSVAE_YELP_PATH` points at the corpus (raw reviews or a prepared
//! `dataset.json`).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use mmsvae_core::checkpoint::file_hash;
use mmsvae_core::critique::{
    blender_objective, build_synthetic_datasets, build_synthetic_datasets_for, encode_critique, example_loss,
    margin_loss, margin_loss_grad, predicted_keyphrases, read_examples_jsonl, BlendParams, CritiqueExample,
    CritiqueMode, CritiqueSession, ExamplePreparer, Polarity, PreparedExample, SyntheticConfig,
};
use mmsvae_core::dataio::{
    build_dataset, dataset_stats, load_interactions, InputFormat, InteractionData, RawInteraction, Split, SplitRatios,
};
use mmsvae_core::evalsim::{explanation_metrics, rank_metrics, MetricReport};
use mmsvae_core::model::{
    elbo, moe_combine, train, ElboSettings, GaussianPosterior, Modality, ModelDims, ModelParams, ModelVariant,
    TrainConfig, UserRows,
};
use mmsvae_core::numerics::{gaussian_kl, grad_check, multinomial_loglik, ParamStore, Rng, FD_STEP};
use mmsvae_core::synth::{generate, SynthConfig};

type Res<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Default)]
struct Outcome {
    failed: Vec<String>,
}

impl Outcome {
    fn record(&mut self, name: &str, result: Res<(bool, String)>) {
        let (ok, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

// ---------------------------------------------------------------- gradients

fn random_binary(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.4) { 1.0 } else { 0.0 }).collect();
    if v.iter().all(|&x| x == 0.0) {
        v[rng.below(n)] = 1.0;
    }
    v
}

fn elbo_grad_error(variant: ModelVariant, dims: ModelDims, seed: u64) -> Res<f64> {
    let mut rng = Rng::new(seed);
    let mut shell = ModelParams::init(variant, dims, seed)?;
    let kplus = random_binary(&mut rng, dims.n_keyphrases);
    let rows = UserRows {
        r: random_binary(&mut rng, dims.n_items),
        kminus: kplus.iter().map(|k| 1.0 - k).collect(),
        kplus,
    };
    let mut store = shell.store.clone();
    let worst = grad_check(
        |s: &mut ParamStore| {
            std::mem::swap(&mut shell.store, s);
            let mut total = 0.0;
            let mut out = Ok(());
            for (t, term) in variant.training_terms().iter().enumerate() {
                let mut rng = Rng::derive(seed, &[t as u64]);
                match elbo(&mut shell, term, &rows, &rows, &ElboSettings::train(0.3, 0.0), &mut rng) {
                    Ok(o) => total += o.loss,
                    Err(e) => {
                        out = Err(e);
                        break;
                    }
                }
            }
            std::mem::swap(&mut shell.store, s);
            out.map(|_| total)
        },
        &mut store,
        FD_STEP,
    )?;
    Ok(worst)
}

fn margin_grad_error(polarity: Polarity, n: usize, seed: u64) -> Res<f64> {
    let mut rng = Rng::new(seed);
    let margin = 0.5;
    // keep every hinge well away from its kink so central differences are exact
    let (r0, r1) = loop {
        let r0: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let r1: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        if r0.iter().zip(&r1).all(|(a, b)| ((b - a).abs() - margin).abs() > 1e-2) {
            break (r0, r1);
        }
    };
    let (affected, unaffected): (Vec<usize>, Vec<usize>) = (0..n).partition(|_| rng.bernoulli(0.5));
    let mut store = ParamStore::new();
    let id = store.insert("r1", mmsvae_core::numerics::DenseMatrix::from_vec(n, 1, r1)?)?;
    let worst = grad_check(
        |s: &mut ParamStore| {
            let r1 = s.value(id).as_slice().to_vec();
            let (loss, g) = margin_loss_grad(polarity, &r0, &r1, &affected, &unaffected, margin)?;
            s.grad_mut(id).add_assign(&g);
            Ok(loss)
        },
        &mut store,
        FD_STEP,
    )?;
    Ok(worst)
}

fn composite_grad_error(polarity: Polarity, mode: CritiqueMode, dims: ModelDims, seed: u64) -> Res<f64> {
    let mut rng = Rng::new(seed);
    let model = ModelParams::init(ModelVariant::Mms3, dims, seed)?;
    let blender = BlendParams::init(dims.latent_dim, mode, seed + 1)?;
    let z_u: Vec<f64> = (0..dims.latent_dim).map(|_| rng.normal()).collect();
    let keyphrase = rng.below(dims.n_keyphrases);
    let z_c = encode_critique(&model, keyphrase, polarity, mode)?;
    let r0 = model.decode(Modality::R, &z_u)?;
    let (affected, unaffected): (Vec<usize>, Vec<usize>) = (0..dims.n_items).partition(|_| rng.bernoulli(0.5));
    let ex = PreparedExample {
        polarity,
        z_u: z_u.into(),
        z_c: z_c.into(),
        r0: r0.into(),
        affected,
        unaffected,
    };
    let cell = blender.cell;
    let mut store = blender.store.clone();
    Ok(grad_check(
        |s: &mut ParamStore| example_loss(&cell, s, &model, &ex, 0.3, true),
        &mut store,
        FD_STEP,
    )?)
}

fn gradient_integrity() -> Res<(bool, String)> {
    let start = Instant::now();
    let shapes = [ModelDims::new(5, 4, 2), ModelDims::new(7, 3, 3), ModelDims::new(4, 6, 2)];
    let mut worst = Vec::new();
    for variant in ModelVariant::ALL {
        let w = shapes
            .iter()
            .enumerate()
            .map(|(s, d)| elbo_grad_error(variant, *d, 10 + s as u64))
            .collect::<Res<Vec<_>>>()?;
        worst.push((format!("elbo/{variant}"), w.into_iter().fold(0.0, f64::max)));
    }
    for polarity in [Polarity::Negative, Polarity::Positive] {
        let w = [6, 9, 12]
            .iter()
            .enumerate()
            .map(|(s, &n)| margin_grad_error(polarity, n, 20 + s as u64))
            .collect::<Res<Vec<_>>>()?;
        worst.push((format!("margin/{polarity}"), w.into_iter().fold(0.0, f64::max)));
    }
    let composite_shapes = [
        (ModelDims::new(6, 4, 2), CritiqueMode::Shared),
        (ModelDims::new(5, 5, 3), CritiqueMode::Split),
        (ModelDims::new(8, 3, 2), CritiqueMode::Split),
    ];
    for polarity in [Polarity::Negative, Polarity::Positive] {
        let w = composite_shapes
            .iter()
            .enumerate()
            .map(|(s, (d, m))| composite_grad_error(polarity, *m, *d, 30 + s as u64))
            .collect::<Res<Vec<_>>>()?;
        worst.push((format!("blend-decode-margin/{polarity}"), w.into_iter().fold(0.0, f64::max)));
    }
    let elapsed = start.elapsed();
    let ok = worst.iter().all(|(_, e)| *e < 1e-4) && elapsed < Duration::from_secs(30);
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((ok, format!("max rel err {detail}; {:.2}s (limit 1e-4, 30s)", elapsed.as_secs_f64())))
}

// ------------------------------------------------------ analytic identities

fn analytic_identities() -> Res<(bool, String)> {
    let mut rng = Rng::new(5);
    let mut notes = Vec::new();
    let mut ok = true;

    let zero = gaussian_kl(&[0.0; 4], &[0.0; 4])?;
    ok &= zero.abs() <= 1e-12;
    notes.push(format!("KL(N(0,I)) = {zero}"));

    // closed form written in terms of the variance
    let mut kl_err = 0.0f64;
    for _ in 0..200 {
        let d = 1 + rng.below(6);
        let mu: Vec<f64> = (0..d).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let var: Vec<f64> = (0..d).map(|_| rng.uniform(0.05, 4.0)).collect();
        let lv: Vec<f64> = var.iter().map(|v| v.ln()).collect();
        let want: f64 = mu.iter().zip(&var).map(|(m, v)| 0.5 * (v + m * m - 1.0 - v.ln())).sum();
        kl_err = kl_err.max((gaussian_kl(&mu, &lv)? - want).abs());
    }
    let one = gaussian_kl(&[1.0], &[0.0])?;
    kl_err = kl_err.max((one - 0.5).abs());
    ok &= kl_err <= 1e-12;
    notes.push(format!("KL closed form err {kl_err:.1e}"));

    let mut shift_err = 0.0f64;
    for _ in 0..200 {
        let n = 2 + rng.below(10);
        let logits: Vec<f64> = (0..n).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let targets = random_binary(&mut rng, n);
        let base = multinomial_loglik(&logits, &targets)?.value;
        for c in [-50.0, 3.7, 1e3] {
            let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
            shift_err = shift_err.max((multinomial_loglik(&shifted, &targets)?.value - base).abs());
        }
    }
    ok &= shift_err <= 1e-10;
    notes.push(format!("loglik shift err {shift_err:.1e}"));

    let mut moe_ok = true;
    for _ in 0..100 {
        let d = 1 + rng.below(5);
        let experts: Vec<GaussianPosterior> = (0..3)
            .map(|_| GaussianPosterior {
                mu: (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect(),
                logvar: (0..d).map(|_| rng.uniform(-3.0, 3.0)).collect(),
            })
            .collect();
        let base = moe_combine(&experts)?;
        for p in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let permuted: Vec<GaussianPosterior> = p.iter().map(|&i| experts[i].clone()).collect();
            moe_ok &= moe_combine(&permuted)? == base;
        }
        for copies in 1..=4 {
            moe_ok &= moe_combine(&vec![experts[0].clone(); copies])? == experts[0];
        }
    }
    ok &= moe_ok;
    notes.push(format!("moe permutation/idempotence exact: {moe_ok}"));
    Ok((ok, notes.join("; ")))
}

// ---------------------------------------------------- objective structure

fn toy_world(seed: u64, users: usize) -> Res<InteractionData> {
    let cfg = SynthConfig {
        users,
        items: 40,
        keyphrases: 10,
        seed,
        ..SynthConfig::default()
    };
    let (records, _) = generate(&cfg)?;
    Ok(build_dataset(&records, 3.5, SplitRatios::parse("0.6,0.2,0.2")?, seed)?)
}

fn objective_structure() -> Res<(bool, String)> {
    let mut ok = true;
    let mut notes = Vec::new();
    let data = toy_world(3, 40)?;
    let dims = ModelDims::new(data.n_items(), data.n_keyphrases(), 4);
    for (variant, want) in [(ModelVariant::Mms, 3), (ModelVariant::Mms3, 4), (ModelVariant::MmsPlus, 5)] {
        let mut params = ModelParams::init(variant, dims, 1)?;
        let log = train(
            &mut params,
            &data,
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )?;
        let terms = variant.training_terms().len();
        ok &= terms == want && log.terms_per_user == want;
        notes.push(format!("{variant} terms {terms}/{}", log.terms_per_user));
    }
    let plus = ModelParams::init(ModelVariant::MmsPlus, dims, 1)?;
    let three = ModelParams::init(ModelVariant::Mms3, dims, 1)?;
    let no_dislike = !plus.has_decoder_params(Modality::KMinus) && three.has_decoder_params(Modality::KMinus);
    ok &= no_dislike;
    notes.push(format!("mmsplus without dislike decoder: {no_dislike}"));

    // objective over D⁺ ∪ D⁻ with D⁺ empty against a hand-written sum of the
    // negative-only hinge terms
    let blender = BlendParams::init(4, CritiqueMode::Split, 2)?;
    let k_hat = predicted_keyphrases(&plus, &data, 3)?;
    let sets = build_synthetic_datasets(&data, &k_hat, &SyntheticConfig::default())?;
    let mut prep = ExamplePreparer::new(&plus, &data, &blender)?;
    let prepared = sets.minus.iter().map(|e| prep.prepare(e)).collect::<Result<Vec<_>, _>>()?;
    let joint = blender_objective(&blender, &plus, &prepared, 0.1)?;
    let mut manual = 0.0;
    for ex in &sets.minus {
        let z_u = plus.user_posterior(&data, ex.user)?.mu;
        let z_c = encode_critique(&plus, ex.keyphrase, Polarity::Negative, CritiqueMode::Split)?;
        let r0 = plus.decode(Modality::R, &z_u)?;
        let h = blender.step(&[0.0; 4], Polarity::Negative, &z_u, &z_c)?.output;
        let r1 = plus.decode(Modality::R, &h)?;
        manual += margin_loss(Polarity::Negative, &r0, &r1, &ex.affected, &ex.unaffected, 0.1)?;
    }
    let diff = (joint - manual).abs();
    ok &= diff <= 1e-12 && !sets.minus.is_empty();
    notes.push(format!("empty-D⁺ objective vs negative-only sum diff {diff:.1e} over {} examples", sets.minus.len()));
    Ok((ok, notes.join("; ")))
}

// ------------------------------------------------------------ critique dataset oracle

fn alg1_world() -> Vec<RawInteraction> {
    let kps = ["spicy", "quiet", "cheap", "pool", "view"];
    // item i mentions keyphrases whose bit is set in PROFILE[i]
    const PROFILE: [u8; 8] = [0b00011, 0b00110, 0b01100, 0b11000, 0b10001, 0b11111, 0b00001, 0b01010];
    let mut rng = Rng::new(99);
    let mut out = Vec::new();
    for u in 0..6 {
        for i in 0..8 {
            if (u + i) % 3 == 0 && !(u == 5 && i == 7) {
                continue;
            }
            let rating = if rng.bernoulli(0.8) { 5.0 } else { 2.0 };
            let keyphrases = (0..5)
                .filter(|k| PROFILE[i] & (1 << k) != 0 && rng.bernoulli(0.7))
                .map(|k| kps[k].to_string())
                .collect();
            out.push(RawInteraction {
                user: format!("u{u}"),
                item: format!("i{i}"),
                rating,
                keyphrases,
            });
        }
    }
    out
}

fn check_example(
    ex: &CritiqueExample,
    kitem: &[BTreeSet<usize>],
    k_hat: &[Vec<usize>],
    n_items: usize,
) -> Result<(), String> {
    let target = &kitem[ex.item];
    match ex.polarity {
        Polarity::Negative if target.contains(&ex.keyphrase) => return Err("negative critique on a target keyphrase".into()),
        Polarity::Positive if !target.contains(&ex.keyphrase) => return Err("positive critique off the target".into()),
        Polarity::Positive if k_hat[ex.user].contains(&ex.keyphrase) => return Err("positive critique already explained".into()),
        _ => {}
    }
    let aff: BTreeSet<usize> = ex.affected.iter().copied().collect();
    let unaff: BTreeSet<usize> = ex.unaffected.iter().copied().collect();
    let want_aff: BTreeSet<usize> = (0..n_items).filter(|&i| kitem[i].contains(&ex.keyphrase)).collect();
    let want_unaff: BTreeSet<usize> = (0..n_items).filter(|&i| !kitem[i].contains(&ex.keyphrase)).collect();
    if aff.len() != ex.affected.len() || unaff.len() != ex.unaffected.len() {
        return Err("duplicate items".into());
    }
    if aff != want_aff || unaff != want_unaff {
        return Err(format!("partition mismatch for keyphrase {}", ex.keyphrase));
    }
    Ok(())
}

/// Keyphrase sets per item recomputed from the raw train reviews.
fn kitem_oracle(records: &[RawInteraction], data: &InteractionData, threshold: f64) -> Vec<BTreeSet<usize>> {
    let mut kitem = vec![BTreeSet::new(); data.n_items()];
    for r in records {
        let (Some(u), Some(i)) = (data.user_index(&r.user), data.item_ids.iter().position(|x| *x == r.item)) else {
            continue;
        };
        if r.rating > threshold && data.train.contains(u, i) {
            for k in &r.keyphrases {
                if let Some(k) = data.keyphrase_index(k) {
                    kitem[i].insert(k);
                }
            }
        }
    }
    kitem
}

fn alg1_oracle() -> Res<(bool, String)> {
    let records = alg1_world();
    let data = build_dataset(&records, 3.5, SplitRatios::parse("0.6,0.2,0.2")?, 4)?;
    if (data.n_users(), data.n_items(), data.n_keyphrases()) != (6, 8, 5) {
        return Ok((false, format!("toy world is {}x{}x{}", data.n_users(), data.n_items(), data.n_keyphrases())));
    }
    let kitem = kitem_oracle(&records, &data, 3.5);
    let k_hat: Vec<Vec<usize>> = (0..6).map(|u| vec![u % 5, (u + 2) % 5]).collect();

    // brute force: every admissible (pair, polarity, keyphrase) triple
    let mut admissible_minus = BTreeSet::new();
    let mut admissible_plus = BTreeSet::new();
    let mut pairs = 0;
    for u in 0..6 {
        for &i in data.val.row(u) {
            pairs += 1;
            for k in 0..5 {
                if !kitem[i].contains(&k) {
                    admissible_minus.insert((u, i, k));
                } else if !k_hat[u].contains(&k) {
                    admissible_plus.insert((u, i, k));
                }
            }
        }
    }
    let covered = |set: &BTreeSet<(usize, usize, usize)>| set.iter().map(|&(u, i, _)| (u, i)).collect::<BTreeSet<_>>();
    let (want_minus_pairs, want_plus_pairs) = (covered(&admissible_minus), covered(&admissible_plus));

    let mut seen_minus = BTreeSet::new();
    let mut seen_plus = BTreeSet::new();
    let mut examples = 0usize;
    for seed in 0..200 {
        let cfg = SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        };
        let sets = build_synthetic_datasets(&data, &k_hat, &cfg)?;
        let got_minus: BTreeSet<_> = sets.minus.iter().map(|e| (e.user, e.item)).collect();
        let got_plus: BTreeSet<_> = sets.plus.iter().map(|e| (e.user, e.item)).collect();
        if got_minus != want_minus_pairs || got_plus != want_plus_pairs {
            return Ok((false, format!("seed {seed}: covered pairs differ from enumeration")));
        }
        if sets.minus.len() != got_minus.len() || sets.plus.len() != got_plus.len() {
            return Ok((false, format!("seed {seed}: more than one example per pair")));
        }
        for ex in sets.minus.iter().chain(&sets.plus) {
            examples += 1;
            if let Err(e) = check_example(ex, &kitem, &k_hat, 8) {
                return Ok((false, format!("seed {seed}: {e}")));
            }
            let triple = (ex.user, ex.item, ex.keyphrase);
            match ex.polarity {
                Polarity::Negative => seen_minus.insert(triple),
                Polarity::Positive => seen_plus.insert(triple),
            };
        }
    }
    let ok = seen_minus == admissible_minus && seen_plus == admissible_plus;
    Ok((
        ok,
        format!(
            "{pairs} validation pairs; {}/{} negative and {}/{} positive admissible critiques drawn over 200 seeds; \
             {examples} examples, all partition/polarity-consistent",
            seen_minus.len(),
            admissible_minus.len(),
            seen_plus.len(),
            admissible_plus.len()
        ),
    ))
}

// ------------------------------------------------------------ metric oracle

fn naive_metrics(scores: &[f64], relevant: &BTreeSet<usize>, k: usize) -> [f64; 5] {
    let pos = |i: usize| {
        (0..scores.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let n_rel = relevant.len();
    let hits_at = |cut: usize| relevant.iter().filter(|&&i| pos(i) < cut).count() as f64;
    let dcg: f64 = relevant
        .iter()
        .map(|&i| pos(i))
        .filter(|&p| p < k)
        .map(|p| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..n_rel.min(k)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    let ap: f64 = relevant
        .iter()
        .map(|&i| pos(i))
        .filter(|&p| p < k)
        .map(|p| relevant.iter().filter(|&&j| pos(j) <= p).count() as f64 / (p + 1) as f64)
        .sum();
    [
        hits_at(n_rel) / n_rel as f64,
        dcg / idcg,
        ap / n_rel.min(k) as f64,
        hits_at(k) / k as f64,
        hits_at(k) / n_rel as f64,
    ]
}

fn as_array(m: &MetricReport) -> [f64; 5] {
    [m.r_precision, m.ndcg, m.map_at_k, m.precision_at_k, m.recall_at_k]
}

fn metric_oracle() -> Res<(bool, String)> {
    let start = Instant::now();
    let mut rng = Rng::new(17);
    let mut worst = 0.0f64;
    for t in 0..1000 {
        let n = 8;
        // coarse scores so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.below(5) as f64 * 0.25).collect();
        let relevant: BTreeSet<usize> = loop {
            let s: BTreeSet<usize> = (0..n).filter(|_| rng.bernoulli(0.35)).collect();
            if !s.is_empty() {
                break s;
            }
        };
        let rel: Vec<usize> = relevant.iter().copied().collect();
        let k = 1 + rng.below(10);
        let got = if t % 2 == 0 {
            rank_metrics(&scores, &rel, k)?
        } else {
            explanation_metrics(&scores, &rel, k)?
        };
        let want = naive_metrics(&scores, &relevant, k);
        for (g, w) in as_array(&got).iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
    }
    // single relevant item at 0-indexed rank 2
    let hand = rank_metrics(&[0.9, 0.8, 0.7, 0.1], &[2], 10)?.ndcg;
    let elapsed = start.elapsed();
    let ok = worst <= 1e-12 && (hand - 0.5).abs() <= 1e-12 && elapsed < Duration::from_secs(10);
    Ok((
        ok,
        format!(
            "1000 instances, max abs diff {worst:.1e}; rank-2 NDCG@10 {hand}; {:.2}s (limit 1e-12, 10s)",
            elapsed.as_secs_f64()
        ),
    ))
}

// ------------------------------------------------- CLI pipeline and lift

const PIPELINE_CONFIG: &str = r#"{
  "seed": 1,
  "latent_dim": 64,
  "learning_rate": 0.01,
  "epochs": 100,
  "batch_size": 32,
  "anneal_steps": 200,
  "patience": 10,
  "blender_learning_rate": 0.003,
  "blender_epochs": 60,
  "margin": 2.0,
  "strategy": "pop",
  "top_n": 10,
  "max_turns": 10,
  "negatives": 99
}"#;

const SIM_RUNS: [(&str, &str); 6] = [
    ("trained", "positive"),
    ("random", "positive"),
    ("uac", "positive"),
    ("trained", "negative"),
    ("random", "negative"),
    ("uac", "negative"),
];

struct Pipeline {
    dir: PathBuf,
    elapsed: Duration,
}

impl Pipeline {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn json(&self, rel: &str) -> Res<Value> {
        Ok(serde_json::from_str(&std::fs::read_to_string(self.path(rel))?)?)
    }
}

fn mmsvae(dir: &Path, args: &[&str]) -> Res<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_mmsvae"))
        .args(["--config", "run.json", "--log", "error"])
        .args(args)
        .current_dir(dir)
        .output()?;
    if !out.status.success() {
        return Err(format!(
            "mmsvae {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        )
        .into());
    }
    Ok(())
}

/// synth → prepare → train → build-critiques → train-blender → eval →
/// simulate, all with relative paths so two runs write identical files.
fn run_pipeline(dir: PathBuf) -> Res<Pipeline> {
    let start = Instant::now();
    std::fs::write(dir.join("run.json"), PIPELINE_CONFIG)?;
    mmsvae(&dir, &["synth", "--out", "corpus.jsonl", "--seed", "7", "--users", "200", "--items", "100", "--keyphrases", "20", "--clusters", "2"])?;
    mmsvae(&dir, &["prepare", "--input", "corpus.jsonl", "--out", "prepared"])?;
    mmsvae(&dir, &["train", "--data", "prepared/dataset.json", "--out", "model"])?;
    let common = ["--data", "prepared/dataset.json", "--model", "model/model.ckpt"];
    mmsvae(&dir, &[&["build-critiques"][..], &common, &["--out", "critiques"]].concat())?;
    mmsvae(&dir, &[&["train-blender"][..], &common, &["--critiques", "critiques", "--out", "blender"]].concat())?;
    mmsvae(&dir, &[&["eval"][..], &common, &["--split", "val", "--out", "eval_val.json"]].concat())?;
    for (baseline, polarity) in SIM_RUNS {
        let out = format!("sim_{baseline}_{polarity}.json");
        mmsvae(
            &dir,
            &[
                &["simulate"][..],
                &common,
                &["--blender", "blender/blender.ckpt", "--baseline", baseline, "--polarity", polarity, "--out", &out],
            ]
            .concat(),
        )?;
    }
    Ok(Pipeline {
        dir,
        elapsed: start.elapsed(),
    })
}

fn success(p: &Pipeline, baseline: &str, polarity: &str) -> Res<f64> {
    p.json(&format!("sim_{baseline}_{polarity}.json"))?["success_rate"]
        .as_f64()
        .ok_or_else(|| "missing success_rate".into())
}

fn synthetic_lift(p: &Pipeline) -> Res<(bool, String)> {
    let eval = p.json("eval_val.json")?;
    let model_ndcg = eval["model"]["recommendation"]["ndcg"]
        .as_f64()
        .ok_or("eval output lacks model ndcg")?;
    let pop_ndcg = eval["popularity"]["ndcg"].as_f64().ok_or("eval output lacks popularity ndcg")?;
    let mut ok = model_ndcg >= 2.0 * pop_ndcg;
    let mut notes = vec![format!("val NDCG {model_ndcg:.4} vs popularity {pop_ndcg:.4} (≥2x)")];
    for polarity in ["positive", "negative"] {
        let (t, r, u) = (
            success(p, "trained", polarity)?,
            success(p, "random", polarity)?,
            success(p, "uac", polarity)?,
        );
        ok &= t >= 1.5 * r && t >= u;
        notes.push(format!("{polarity}: blender {t:.3}, random {r:.3} ({:.2}x, ≥1.5x), uac {u:.3}", t / r));
    }
    ok &= p.elapsed < Duration::from_secs(600);
    notes.push(format!("pipeline {:.1}s (limit 600s)", p.elapsed.as_secs_f64()));
    Ok((ok, notes.join("; ")))
}

fn direction_property(p: &Pipeline) -> Res<(bool, String)> {
    let data = InteractionData::load(p.path("prepared/dataset.json"))?;
    let model = ModelParams::load(p.path("model/model.ckpt"), None)?;
    let blender = BlendParams::load(p.path("blender/blender.ckpt"), &model)?;
    let k_hat = predicted_keyphrases(&model, &data, 10)?;
    let held = build_synthetic_datasets_for(&data, Split::Test, &k_hat, &SyntheticConfig::default())?;
    let mean = |s: &[f64], idx: &[usize]| idx.iter().map(|&i| s[i]).sum::<f64>() / idx.len() as f64;
    let mut notes = Vec::new();
    let mut ok = true;
    for (examples, polarity) in [(&held.plus, Polarity::Positive), (&held.minus, Polarity::Negative)] {
        let mut moved = 0usize;
        let mut total = 0usize;
        for ex in examples.iter().filter(|e| !e.affected.is_empty()) {
            let z_u = model.user_posterior(&data, ex.user)?.mu;
            let mut session = CritiqueSession::new(&model, z_u, Vec::new(), None, 1)?;
            let before = mean(&session.initial_scores, &ex.affected);
            let after = mean(session.blend(&model, &blender, ex.keyphrase, polarity)?, &ex.affected);
            total += 1;
            let right_way = match polarity {
                Polarity::Positive => after > before,
                Polarity::Negative => after < before,
            };
            moved += usize::from(right_way);
        }
        let frac = moved as f64 / total.max(1) as f64;
        ok &= total > 0 && frac >= 0.8;
        notes.push(format!("{polarity}: {moved}/{total} = {frac:.3}"));
    }
    notes.push("threshold 0.8 on held-out test-pair critiques".into());
    Ok((ok, notes.join("; ")))
}

fn partition_on_pipeline(p: &Pipeline) -> Res<(bool, String)> {
    let data = InteractionData::load(p.path("prepared/dataset.json"))?;
    let model = ModelParams::load(p.path("model/model.ckpt"), None)?;
    let k_hat = predicted_keyphrases(&model, &data, 10)?;
    let kitem: Vec<BTreeSet<usize>> = (0..data.n_items()).map(|i| data.kitem.row(i).iter().copied().collect()).collect();
    let mut n = 0;
    for file in ["critiques/d_plus.jsonl", "critiques/d_minus.jsonl"] {
        for ex in read_examples_jsonl(p.path(file))? {
            n += 1;
            if let Err(e) = check_example(&ex, &kitem, &k_hat, data.n_items()) {
                return Ok((false, format!("{file}: {e}")));
            }
        }
    }
    Ok((n > 0, format!("{n} examples of the toy pipeline, none capped at 100 per set")))
}

fn determinism(a: &Pipeline, b: &Pipeline) -> Res<(bool, String)> {
    let mut files = vec![
        "prepared/dataset.json".to_string(),
        "model/model.ckpt".into(),
        "critiques/d_plus.jsonl".into(),
        "critiques/d_minus.jsonl".into(),
        "blender/blender.ckpt".into(),
    ];
    files.extend(SIM_RUNS.iter().map(|(b, p)| format!("sim_{b}_{p}.json")));
    let mut differing = Vec::new();
    for f in &files {
        if file_hash(a.path(f))? != file_hash(b.path(f))? {
            differing.push(f.clone());
        }
    }
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artefacts hash-identical across two runs", files.len())
        } else {
            format!("differ: {}", differing.join(", "))
        },
    ))
}

// ------------------------------------------------------------------- Yelp

fn yelp_stats(path: &Path) -> Res<(bool, String)> {
    let data = if path.extension().is_some_and(|e| e == "json") {
        InteractionData::load(path)?
    } else {
        let format = InputFormat::from_path(path).unwrap_or(InputFormat::Jsonl);
        build_dataset(&load_interactions(path, format)?, 3.5, SplitRatios::parse("0.6,0.2,0.2")?, 0)?
    };
    let s = dataset_stats(&data);
    let sparsity_pct = (s.sparsity * 10_000.0).round() / 100.0;
    let got = json!([s.users, s.items, s.interactions, sparsity_pct, s.keyphrases]);
    let want = json!([9801, 4706, 140496, 99.70, 234]);
    Ok((got == want, format!("got {got}, want {want}")))
}

fn main() {
    let mut outcome = Outcome::default();
    outcome.record("gradient integrity", gradient_integrity());
    outcome.record("analytic identities", analytic_identities());
    outcome.record("objective structure", objective_structure());
    outcome.record("critique dataset oracle", alg1_oracle());
    outcome.record("metric oracle", metric_oracle());

    let root = tempfile::tempdir().expect("temp dir");
    let make = |name: &str| {
        let d = root.path().join(name);
        std::fs::create_dir_all(&d).map_err(Box::<dyn std::error::Error>::from)?;
        run_pipeline(d)
    };
    match (make("a"), make("b")) {
        (Ok(a), Ok(b)) => {
            outcome.record("critique dataset invariants (pipeline)", partition_on_pipeline(&a));
            outcome.record("synthetic end-to-end lift", synthetic_lift(&a));
            outcome.record("direction property", direction_property(&a));
            outcome.record("determinism", determinism(&a, &b));
        }
        (a, b) => {
            let err = a.err().or(b.err()).map(|e| e.to_string()).unwrap_or_default();
            for name in ["synthetic end-to-end lift", "direction property", "determinism"] {
                outcome.record(name, Err(err.clone().into()));
            }
        }
    }

    match std::env::var_os("MMSVAE_YELP_PATH") {
        Some(p) => outcome.record("yelp dataset statistics", yelp_stats(Path::new(&p))),
        None => println!("SKIP yelp dataset statistics: MMSVAE_YELP_PATH not set"),
    }

    if outcome.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", outcome.failed.len(), outcome.failed.join(", "));
        std::process::exit(1);
    }
}
