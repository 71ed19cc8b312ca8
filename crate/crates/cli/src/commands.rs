use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mmsvae_core::critique::{
    build_synthetic_datasets, predicted_keyphrases, read_examples_jsonl, train_blender, write_examples_jsonl,
    BlendParams, BlenderConfig, CritiqueMode, Polarity, SyntheticConfig,
};
use mmsvae_core::dataio::{build_dataset, dataset_stats, load_interactions, InputFormat, InteractionData, Split, SplitRatios};
use mmsvae_core::evalsim::{
    compare_runs, comparison_csv, evaluate_model, evaluate_popularity, simulate, BlendCritiquer, Critiquer,
    IdentityCritiquer, SimConfig, SimResult, Strategy, UacCritiquer,
};
use mmsvae_core::model::{train, ModelDims, ModelParams, ModelVariant, TrainConfig};
use mmsvae_core::synth::{generate, write_jsonl, SynthConfig};
use mmsvae_service::{AppState, ServiceConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_value, require, RunConfig};
use crate::{CliError, Command};

pub const DEFAULT_LATENT_DIM: usize = 64;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(path: &Path) -> Result<&Path> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path)
}

fn validation(e: impl std::fmt::Display) -> anyhow::Error {
    CliError::Validation(e.to_string()).into()
}

fn load_data(path: &Path) -> Result<InteractionData> {
    InteractionData::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_model(path: &Path, data: &InteractionData) -> Result<ModelParams> {
    let model = ModelParams::load(path, None).with_context(|| format!("loading model {}", path.display()))?;
    if model.dims.n_items != data.n_items() || model.dims.n_keyphrases != data.n_keyphrases() {
        return Err(validation(format!(
            "model {} expects {} items / {} keyphrases but the dataset has {} / {}",
            path.display(),
            model.dims.n_items,
            model.dims.n_keyphrases,
            data.n_items(),
            data.n_keyphrases()
        )));
    }
    Ok(model)
}

fn emit(out: Option<&PathBuf>, value: &Value) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_json(p, value)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

pub fn run(config: Option<&Path>, command: Command) -> Result<()> {
    let file = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match command {
        Command::Synth { common, synth } => {
            let (common, s) = (common.merged(&file), synth.merged(&file));
            let d = SynthConfig::default();
            let cfg = SynthConfig {
                users: s.users.unwrap_or(d.users),
                items: s.items.unwrap_or(d.items),
                keyphrases: s.keyphrases.unwrap_or(d.keyphrases),
                clusters: s.clusters.unwrap_or(d.clusters),
                seed: common.seed.unwrap_or(d.seed),
                ..d
            };
            cfg.validate().map_err(validation)?;
            let out = require(common.out, "out")?;
            let (records, truth) = generate(&cfg)?;
            if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_jsonl(&out, &records)?;
            write_json(
                &out.with_extension("meta.json"),
                &json!({ "config": cfg, "records": records.len(), "truth": truth }),
            )?;
            eprintln!("wrote {} reviews to {}", records.len(), out.display());
            Ok(())
        }

        Command::Prepare { common, prepare } => {
            let (common, p) = (common.merged(&file), prepare.merged(&file));
            let input = require(p.input, "input")?;
            let format = match &p.format {
                Some(f) => parse_value::<InputFormat>(f, "format")?,
                None => InputFormat::from_path(&input)
                    .ok_or_else(|| CliError::Usage(format!("cannot infer the format of {}; pass --format", input.display())))?,
            };
            let threshold = p.threshold.unwrap_or(3.5);
            let ratios = match &p.ratios {
                Some(r) => SplitRatios::parse(r).map_err(validation)?,
                None => SplitRatios::default(),
            };
            let seed = common.seed.unwrap_or(0);
            let dir = require(common.out, "out")?;
            let records = load_interactions(&input, format)?;
            let data = build_dataset(&records, threshold, ratios, seed)?;
            let dir = out_dir(&dir)?;
            data.save(dir.join("dataset.json"))?;
            let stats = dataset_stats(&data);
            let resolved = json!({
                "command": "prepare",
                "input": input,
                "format": format,
                "threshold": threshold,
                "ratios": ratios,
                "seed": seed,
            });
            write_json(
                &dir.join("stats.json"),
                &json!({ "config": resolved, "stats": stats, "report": data.report }),
            )?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
            Ok(())
        }

        Command::Train { common, data, train: t } => {
            let (common, t) = (common.merged(&file), t.merged(&file));
            let data_path = require(data.merged(&file).data, "data")?;
            let variant: ModelVariant = parse_value(t.variant.as_deref().unwrap_or("mmsplus"), "variant")?;
            let latent_dim = t.latent_dim.unwrap_or(DEFAULT_LATENT_DIM);
            let d = TrainConfig::default();
            let cfg = TrainConfig {
                learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
                beta_max: t.beta_max.unwrap_or(d.beta_max),
                anneal_steps: t.anneal_steps.or(d.anneal_steps),
                epochs: t.epochs.unwrap_or(d.epochs),
                batch_size: t.batch_size.unwrap_or(d.batch_size),
                dropout_rate: t.dropout_rate.unwrap_or(d.dropout_rate),
                patience: t.patience.unwrap_or(d.patience),
                eval_k: t.eval_k.unwrap_or(d.eval_k),
                seed: common.seed.unwrap_or(d.seed),
                ..d
            };
            cfg.validate().map_err(validation)?;
            if latent_dim == 0 {
                return Err(validation("latent_dim must be positive"));
            }
            let dir = require(common.out, "out")?;
            let data = load_data(&data_path)?;
            let mut model = match &t.resume {
                Some(p) => {
                    let m = ModelParams::load(p, Some(variant)).with_context(|| format!("resuming from {}", p.display()))?;
                    if m.dims != ModelDims::new(data.n_items(), data.n_keyphrases(), m.dims.latent_dim) {
                        return Err(validation("resume checkpoint does not match the dataset"));
                    }
                    m
                }
                None => ModelParams::init(
                    variant,
                    ModelDims::new(data.n_items(), data.n_keyphrases(), latent_dim),
                    cfg.seed,
                )?,
            };
            let start_step = model.step;
            let log = train(&mut model, &data, &cfg)?;
            let resolved = json!({
                "command": "train",
                "data": data_path,
                "variant": variant,
                "latent_dim": model.dims.latent_dim,
                "resume": t.resume,
                "resumed_at_step": start_step,
                "train": cfg,
            });
            let dir = out_dir(&dir)?;
            model.save(dir.join("model.ckpt"), resolved.clone())?;
            let mut steps = String::from("step,epoch,beta,loss,users,terms\n");
            for s in &log.steps {
                writeln!(steps, "{},{},{},{},{},{}", s.step, s.epoch, s.beta, s.loss, s.users, s.terms)?;
            }
            fs::write(dir.join("loss.csv"), steps)?;
            let mut epochs = String::from("epoch,loss,recon_loglik,val_ndcg\n");
            for e in &log.epochs {
                let ndcg = e.val_ndcg.map(|v| v.to_string()).unwrap_or_default();
                writeln!(epochs, "{},{},{},{}", e.epoch, e.loss, e.recon_loglik, ndcg)?;
            }
            fs::write(dir.join("epochs.csv"), epochs)?;
            write_json(
                &dir.join("train_log.json"),
                &json!({
                    "config": resolved,
                    "variant": log.variant,
                    "terms_per_user": log.terms_per_user,
                    "anneal_steps": log.anneal_steps,
                    "steps": log.steps.len(),
                    "final_step": model.step,
                    "best_epoch": log.best_epoch,
                    "best_val_ndcg": log.best_val_ndcg,
                    "stopped_early": log.stopped_early,
                    "epochs": log.epochs,
                }),
            )?;
            eprintln!(
                "{}: {} terms per user, {} epochs, best val NDCG@{} {:?}",
                variant.name(),
                log.terms_per_user,
                log.epochs.len(),
                cfg.eval_k,
                log.best_val_ndcg
            );
            Ok(())
        }

        Command::BuildCritiques { common, data, model, critiques } => {
            let (common, c) = (common.merged(&file), critiques.merged(&file));
            let data_path = require(data.merged(&file).data, "data")?;
            let model_path = require(model.merged(&file).model, "model")?;
            let dir = require(common.out, "out")?;
            let d = SyntheticConfig::default();
            let cfg = SyntheticConfig {
                cap_affected: c.cap_affected.unwrap_or(d.cap_affected),
                cap_unaffected: c.cap_unaffected.unwrap_or(d.cap_unaffected),
                seed: common.seed.unwrap_or(d.seed),
            };
            let explain_top = c.explain_top.unwrap_or(10);
            let data = load_data(&data_path)?;
            let model = load_model(&model_path, &data)?;
            let k_hat = predicted_keyphrases(&model, &data, explain_top)?;
            let sets = build_synthetic_datasets(&data, &k_hat, &cfg)?;
            let dir = out_dir(&dir)?;
            write_examples_jsonl(dir.join("d_plus.jsonl"), &sets.plus)?;
            write_examples_jsonl(dir.join("d_minus.jsonl"), &sets.minus)?;
            let summary = json!({
                "config": {
                    "command": "build-critiques",
                    "data": data_path,
                    "model": model_path,
                    "explain_top": explain_top,
                    "synthetic": cfg,
                },
                "positive_examples": sets.plus.len(),
                "negative_examples": sets.minus.len(),
                "report": sets.report,
            });
            write_json(&dir.join("report.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary["report"])?);
            Ok(())
        }

        Command::TrainBlender { common, data, model, blender } => {
            let (common, b) = (common.merged(&file), blender.merged(&file));
            let data_path = require(data.merged(&file).data, "data")?;
            let model_path = require(model.merged(&file).model, "model")?;
            let crit_dir = require(b.critiques, "critiques")?;
            let dir = require(common.out, "out")?;
            let d = BlenderConfig::default();
            let cfg = BlenderConfig {
                learning_rate: b.blender_learning_rate.unwrap_or(d.learning_rate),
                epochs: b.blender_epochs.unwrap_or(d.epochs),
                batch_size: b.blender_batch_size.unwrap_or(d.batch_size),
                margin: b.margin.unwrap_or(d.margin),
                seed: common.seed.unwrap_or(d.seed),
            };
            if !(cfg.margin >= 0.0) {
                return Err(validation("margin must be >= 0"));
            }
            let data = load_data(&data_path)?;
            let model = load_model(&model_path, &data)?;
            let mode = match &b.mode {
                Some(m) => parse_value::<CritiqueMode>(m, "mode")?,
                None => CritiqueMode::for_variant(model.variant),
            };
            let d_plus = read_examples_jsonl(crit_dir.join("d_plus.jsonl"))?;
            let d_minus = read_examples_jsonl(crit_dir.join("d_minus.jsonl"))?;
            let mut blender = BlendParams::init(model.dims.latent_dim, mode, cfg.seed)?;
            let log = train_blender(&mut blender, &model, &data, &d_plus, &d_minus, &cfg)?;
            let resolved = json!({
                "command": "train-blender",
                "data": data_path,
                "model": model_path,
                "critiques": crit_dir,
                "mode": mode,
                "blender": cfg,
            });
            let dir = out_dir(&dir)?;
            blender.save(dir.join("blender.ckpt"), &model, resolved.clone(), log.steps)?;
            write_json(&dir.join("blender_log.json"), &json!({ "config": resolved, "log": log }))?;
            if let Some(last) = log.epochs.last() {
                eprintln!(
                    "blender: {} + / {} - examples, final loss {:.5} (+ {:.5}, - {:.5})",
                    log.positive_examples, log.negative_examples, last.loss, last.positive_loss, last.negative_loss
                );
            }
            Ok(())
        }

        Command::Eval { common, data, model, eval } => {
            let (common, e) = (common.merged(&file), eval.merged(&file));
            let data_path = require(data.merged(&file).data, "data")?;
            let model_path = require(model.merged(&file).model, "model")?;
            let split: Split = parse_value(e.split.as_deref().unwrap_or("test"), "split")?;
            let k = e.k.unwrap_or(10);
            if k == 0 {
                return Err(validation("k must be positive"));
            }
            let data = load_data(&data_path)?;
            let model = load_model(&model_path, &data)?;
            let report = evaluate_model(&model, &data, split, k)?;
            let pop = evaluate_popularity(&data, split, k)?;
            emit(
                common.out.as_ref(),
                &json!({
                    "config": { "command": "eval", "data": data_path, "model": model_path, "split": split, "k": k },
                    "variant": model.variant,
                    "model": report,
                    "popularity": pop,
                }),
            )
        }

        Command::Simulate { common, data, model, sim } => {
            let (common, s) = (common.merged(&file), sim.merged(&file));
            let data_path = require(data.merged(&file).data, "data")?;
            let model_path = require(model.merged(&file).model, "model")?;
            let d = SimConfig::default();
            let cfg = SimConfig {
                polarity: match &s.polarity {
                    Some(p) => parse_value::<Polarity>(p, "polarity")?,
                    None => d.polarity,
                },
                strategy: match &s.strategy {
                    Some(p) => parse_value::<Strategy>(p, "strategy")?,
                    None => d.strategy,
                },
                top_n: s.top_n.unwrap_or(d.top_n),
                max_turns: s.max_turns.unwrap_or(d.max_turns),
                n_candidate_negatives: s.negatives.unwrap_or(d.n_candidate_negatives),
                seed: common.seed.unwrap_or(d.seed),
                confidence: s.confidence.unwrap_or(d.confidence),
            };
            cfg.validate().map_err(validation)?;
            let baseline = s.baseline.as_deref().unwrap_or("trained").to_ascii_lowercase();
            let data = load_data(&data_path)?;
            let model = load_model(&model_path, &data)?;
            let mode = match &s.mode {
                Some(m) => parse_value::<CritiqueMode>(m, "mode")?,
                None => CritiqueMode::for_variant(model.variant),
            };
            let blender = match baseline.as_str() {
                "trained" => {
                    let p = require(s.blender.clone(), "blender")?;
                    Some(BlendParams::load(&p, &model).with_context(|| format!("loading blender {}", p.display()))?)
                }
                "random" => Some(BlendParams::init(model.dims.latent_dim, mode, cfg.seed)?),
                "uac" | "identity" => None,
                other => {
                    return Err(validation(format!(
                        "unknown baseline `{other}` (trained, random, uac or identity)"
                    )))
                }
            };
            let critiquer: Box<dyn Critiquer + '_> = match (baseline.as_str(), &blender) {
                (name, Some(b)) => Box::new(BlendCritiquer {
                    label: if name == "trained" { "blender".into() } else { "random-blender".into() },
                    model: &model,
                    data: &data,
                    blender: b,
                }),
                ("uac", None) => Box::new(UacCritiquer {
                    model: &model,
                    data: &data,
                    mode,
                }),
                _ => Box::new(IdentityCritiquer {
                    model: &model,
                    data: &data,
                }),
            };
            let result = simulate(critiquer.as_ref(), &data, &cfg)?;
            eprintln!(
                "{} {} {}: success {:.4} ± {:.4}, length {:.3} ± {:.3} over {} sessions",
                result.model,
                cfg.polarity,
                cfg.strategy,
                result.success_rate,
                result.success_ci,
                result.avg_length,
                result.length_ci,
                result.n_sessions
            );
            let mut value = serde_json::to_value(&result)?;
            value["run"] = json!({
                "command": "simulate",
                "data": data_path,
                "model": model_path,
                "blender": s.blender,
                "baseline": baseline,
                "mode": mode,
                "sim": cfg,
            });
            emit(common.out.as_ref(), &value)
        }

        Command::Compare { common, results } => {
            let common = common.merged(&file);
            let runs = results
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<SimResult>(&text)
                        .map_err(|e| validation(format!("{}: not a simulation result: {e}", p.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = compare_runs(&runs)?;
            match common.out {
                Some(dir) => {
                    let dir = out_dir(&dir)?;
                    fs::write(dir.join("comparison.csv"), comparison_csv(&rows)?)?;
                    write_json(&dir.join("comparison.json"), &json!({ "inputs": results, "rows": rows }))?;
                }
                None => print!("{}", comparison_csv(&rows)?),
            }
            Ok(())
        }

        Command::Serve { data, model, serve } => {
            let s = serve.merged(&file);
            let mut cfg = ServiceConfig::from_env()?;
            if let Some(p) = data.merged(&file).data {
                cfg.data_path = Some(p);
            }
            if let Some(p) = model.merged(&file).model {
                cfg.model_path = Some(p);
            }
            if let Some(p) = s.blender {
                cfg.blender_path = Some(p);
            }
            cfg.port = s.port.unwrap_or(cfg.port);
            cfg.top_n = s.top_n.unwrap_or(cfg.top_n);
            cfg.max_turns = s.max_turns.unwrap_or(cfg.max_turns);
            let state = AppState::load(cfg.clone())?;
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            rt.block_on(async {
                let listener = mmsvae_service::bind(cfg.port).await?;
                eprintln!("serving on port {}", listener.local_addr()?.port());
                mmsvae_service::run(listener, state).await?;
                Ok(())
            })
        }
    }
}
