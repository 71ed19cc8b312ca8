use serde::{Deserialize, Serialize};

use super::elbo::{elbo, ElboSettings, UserRows};
use super::network::ModelParams;
use super::variant::ModelVariant;
use crate::dataio::{InteractionData, Split};
use crate::error::{Error, Result};
use crate::evalsim::evaluate::evaluate_model;
use crate::numerics::{Adam, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Final KL weight of the linear schedule.
    pub beta_max: f64,
    /// Steps to reach `beta_max`; `None` means one epoch of batches.
    pub anneal_steps: Option<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    /// Hinge margin of the critiquing objective.
    pub margin: f64,
    pub seed: u64,
    /// Epochs without validation NDCG improvement before stopping.
    pub patience: usize,
    /// Cutoff for the validation NDCG.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            beta_max: 0.2,
            anneal_steps: None,
            epochs: 100,
            batch_size: 64,
            dropout_rate: 0.2,
            margin: 0.1,
            seed: 0,
            patience: 10,
            eval_k: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_max >= 0.0) {
            return Err(Error::Config(format!("beta_max must be >= 0, got {}", self.beta_max)));
        }
        if self.anneal_steps == Some(0) {
            return Err(Error::Config("anneal_steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("margin must be >= 0".into()));
        }
        Ok(())
    }

    /// Linear KL warm-up: `beta_max · min(1, step / anneal_steps)`.
    pub fn beta_at(&self, step: u64, anneal_steps: u64) -> f64 {
        self.beta_max * (step as f64 / anneal_steps.max(1) as f64).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub beta: f64,
    /// Mean per-user loss over the batch (sum over ELBO terms).
    pub loss: f64,
    pub users: usize,
    /// ELBO terms evaluated in this step.
    pub terms: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Mean per-user reconstruction log-likelihood of the joint term.
    pub recon_loglik: f64,
    pub val_ndcg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub variant: ModelVariant,
    pub terms_per_user: usize,
    pub anneal_steps: u64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_ndcg: Option<f64>,
    pub stopped_early: bool,
}

/// Fits `params` on the train split, summing the variant's ELBO terms per
/// user. Keeps the weights of the best validation epoch when validation
/// data exists.
pub fn train(params: &mut ModelParams, data: &InteractionData, config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    if params.dims.n_items != data.n_items() || params.dims.n_keyphrases != data.n_keyphrases() {
        return Err(Error::dim(format!(
            "model built for {} items / {} keyphrases, data has {} / {}",
            params.dims.n_items,
            params.dims.n_keyphrases,
            data.n_items(),
            data.n_keyphrases()
        )));
    }
    let n_users = data.n_users();
    if n_users == 0 {
        return Err(Error::EmptyDataset("no users".into()));
    }
    let batches_per_epoch = n_users.div_ceil(config.batch_size) as u64;
    let anneal_steps = config.anneal_steps.unwrap_or(batches_per_epoch);
    let terms = params.variant.training_terms();
    let has_val = data.val.nnz() > 0;

    let mut log = TrainLog {
        variant: params.variant,
        terms_per_user: terms.len(),
        anneal_steps,
        steps: Vec::new(),
        epochs: Vec::new(),
        best_epoch: None,
        best_val_ndcg: None,
        stopped_early: false,
    };
    let mut rng = Rng::derive(config.seed, &[params.step]);
    let mut adam = Adam::new(config.learning_rate);
    let mut best_store = None;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..n_users).collect();

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_recon = 0.0;
        for batch in order.chunks(config.batch_size) {
            let beta = config.beta_at(params.step, anneal_steps);
            let settings = ElboSettings::train(beta, config.dropout_rate);
            params.store.zero_grads();
            let mut batch_loss = 0.0;
            for &u in batch {
                let rows = UserRows::from_data(data, u);
                for (t, term) in terms.iter().enumerate() {
                    let out = elbo(params, term, &rows, &rows, &settings, &mut rng)?;
                    if !out.loss.is_finite() {
                        return Err(Error::Divergence {
                            step: params.step as usize,
                            detail: format!(
                                "user {u}, term {:?}: loss {} (kl {}, recon {:?})",
                                term, out.loss, out.kl, out.recon
                            ),
                        });
                    }
                    batch_loss += out.loss;
                    if t == 0 {
                        epoch_recon += out.recon_total();
                    }
                }
            }
            params.store.scale_grads(1.0 / batch.len() as f64);
            if !params.store.grads_finite() {
                return Err(Error::Divergence {
                    step: params.step as usize,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(&mut params.store);
            params.step += 1;
            epoch_loss += batch_loss;
            log.steps.push(StepRecord {
                step: params.step,
                epoch,
                beta,
                loss: batch_loss / batch.len() as f64,
                users: batch.len(),
                terms: batch.len() * terms.len(),
            });
        }

        let val_ndcg = if has_val {
            Some(evaluate_model(params, data, Split::Val, config.eval_k)?.recommendation.ndcg)
        } else {
            None
        };
        log.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss / n_users as f64,
            recon_loglik: epoch_recon / n_users as f64,
            val_ndcg,
        });
        log::debug!(
            "epoch {epoch}: loss {:.4} val ndcg {:?}",
            epoch_loss / n_users as f64,
            val_ndcg
        );

        if let Some(ndcg) = val_ndcg {
            if log.best_val_ndcg.is_none_or(|b| ndcg > b) {
                log.best_val_ndcg = Some(ndcg);
                log.best_epoch = Some(epoch);
                best_store = Some(params.store.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some(store) = best_store {
        params.store = store;
        params.store.zero_grads();
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_beta_schedule() {
        let cfg = TrainConfig {
            beta_max: 0.2,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.beta_at(0, 100), 0.0);
        assert!((cfg.beta_at(100, 100) - 0.2).abs() < 1e-15);
        assert!((cfg.beta_at(50, 100) - 0.1).abs() < 1e-15);
        assert!((cfg.beta_at(500, 100) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            beta_max: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            anneal_steps: Some(0),
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
