use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::blend::{encode_critique, example_loss, BlendParams, PreparedExample};
use super::synthetic::CritiqueExample;
use super::types::Polarity;
use crate::dataio::InteractionData;
use crate::error::{Error, Result};
use crate::model::{Modality, ModelParams};
use crate::numerics::{Adam, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlenderConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for BlenderConfig {
    fn default() -> Self {
        BlenderConfig {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            margin: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlenderEpoch {
    pub epoch: usize,
    /// Mean loss per example, measured before each update.
    pub loss: f64,
    pub positive_loss: f64,
    pub negative_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlenderLog {
    pub positive_examples: usize,
    pub negative_examples: usize,
    pub epochs: Vec<BlenderEpoch>,
    pub steps: u64,
}

/// A user's latent and the item logits decoded from it.
type UserCache = (Arc<[f64]>, Arc<[f64]>);

/// Resolves latents and baseline scores for synthetic examples. User
/// latents, item scores and critique embeddings are shared between
/// examples.
pub struct ExamplePreparer<'a> {
    model: &'a ModelParams,
    data: &'a InteractionData,
    mode: super::types::CritiqueMode,
    users: HashMap<usize, UserCache>,
    critiques: HashMap<(usize, Polarity), Arc<[f64]>>,
}

impl<'a> ExamplePreparer<'a> {
    pub fn new(model: &'a ModelParams, data: &'a InteractionData, blender: &BlendParams) -> Result<Self> {
        blender.check_compatible(model)?;
        Ok(ExamplePreparer {
            model,
            data,
            mode: blender.mode,
            users: HashMap::new(),
            critiques: HashMap::new(),
        })
    }

    pub fn prepare(&mut self, ex: &CritiqueExample) -> Result<PreparedExample> {
        if !self.users.contains_key(&ex.user) {
            let z = self.model.user_posterior(self.data, ex.user)?.mu;
            let r0 = self.model.decode(Modality::R, &z)?;
            self.users.insert(ex.user, (z.into(), r0.into()));
        }
        let key = (ex.keyphrase, ex.polarity);
        if !self.critiques.contains_key(&key) {
            let z_c = encode_critique(self.model, ex.keyphrase, ex.polarity, self.mode)?;
            self.critiques.insert(key, z_c.into());
        }
        let (z_u, r0) = &self.users[&ex.user];
        Ok(PreparedExample {
            polarity: ex.polarity,
            z_u: z_u.clone(),
            z_c: self.critiques[&key].clone(),
            r0: r0.clone(),
            affected: ex.affected.clone(),
            unaffected: ex.unaffected.clone(),
        })
    }
}

/// Summed margin objective over both datasets for the current blender,
/// without touching gradients.
pub fn blender_objective(
    blender: &BlendParams,
    model: &ModelParams,
    examples: &[PreparedExample],
    margin: f64,
) -> Result<f64> {
    let mut store = blender.store.clone();
    examples
        .iter()
        .map(|ex| example_loss(&blender.cell, &mut store, model, ex, margin, false))
        .sum()
}

/// Fits the blender on interleaved positive and negative examples. The model
/// is borrowed immutably and therefore cannot change.
pub fn train_blender(
    blender: &mut BlendParams,
    model: &ModelParams,
    data: &InteractionData,
    d_plus: &[CritiqueExample],
    d_minus: &[CritiqueExample],
    config: &BlenderConfig,
) -> Result<BlenderLog> {
    if d_plus.is_empty() && d_minus.is_empty() {
        return Err(Error::EmptyDataset("no synthetic critiquing examples".into()));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Config("blender batch_size and learning_rate must be positive".into()));
    }
    let mut prep = ExamplePreparer::new(model, data, blender)?;
    let examples = d_plus
        .iter()
        .chain(d_minus)
        .map(|ex| prep.prepare(ex))
        .collect::<Result<Vec<_>>>()?;
    fit_prepared(blender, model, &examples, config, d_plus.len(), d_minus.len())
}

/// Training loop over already prepared examples.
pub fn fit_prepared(
    blender: &mut BlendParams,
    model: &ModelParams,
    examples: &[PreparedExample],
    config: &BlenderConfig,
    positive_examples: usize,
    negative_examples: usize,
) -> Result<BlenderLog> {
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = BlenderLog {
        positive_examples,
        negative_examples,
        epochs: Vec::new(),
        steps: 0,
    };
    let cell = blender.cell;
    for epoch in 0..config.epochs {
        Rng::derive(config.seed, &[epoch as u64]).shuffle(&mut order);
        let (mut total, mut pos, mut neg) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            blender.store.zero_grads();
            for &idx in batch {
                let ex = &examples[idx];
                let l = example_loss(&cell, &mut blender.store, model, ex, config.margin, true)?;
                total += l;
                match ex.polarity {
                    Polarity::Positive => pos += l,
                    Polarity::Negative => neg += l,
                }
            }
            blender.store.scale_grads(1.0 / batch.len() as f64);
            if !blender.store.grads_finite() {
                return Err(Error::Divergence {
                    step: log.steps as usize,
                    detail: "non-finite blender gradient".into(),
                });
            }
            adam.step(&mut blender.store);
            log.steps += 1;
        }
        let n = examples.len().max(1) as f64;
        log.epochs.push(BlenderEpoch {
            epoch,
            loss: total / n,
            positive_loss: pos / positive_examples.max(1) as f64,
            negative_loss: neg / negative_examples.max(1) as f64,
        });
        log::debug!("blender epoch {epoch}: loss {:.5}", total / n);
    }
    blender.store.zero_grads();
    Ok(log)
}
