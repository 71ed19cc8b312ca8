use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::types::{Critique, CritiqueMode, Polarity};
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::model::{Modality, ModelParams};
use crate::numerics::{GruCache, GruCell, ParamId, ParamStore, Rng};

const GRU_PREFIX: &str = "gru";
const E_PLUS: &str = "e.plus";
const E_MINUS: &str = "e.minus";

/// Resolved handles into a blender's store.
#[derive(Clone, Copy, Debug)]
pub struct BlendCell {
    pub gru: GruCell,
    pub e_plus: ParamId,
    pub e_minus: ParamId,
    pub latent_dim: usize,
}

impl BlendCell {
    pub fn resolve(store: &ParamStore) -> Result<Self> {
        let gru = GruCell::resolve(store, GRU_PREFIX)?;
        let latent_dim = gru.hidden_dim(store);
        if gru.input_dim(store) != 3 * latent_dim {
            return Err(Error::dim(format!(
                "blender GRU input is {}, expected 3 x {latent_dim}",
                gru.input_dim(store)
            )));
        }
        let e_plus = store.id(E_PLUS)?;
        let e_minus = store.id(E_MINUS)?;
        for id in [e_plus, e_minus] {
            if store.value(id).shape() != (latent_dim, 1) {
                return Err(Error::dim("polarity embedding shape"));
            }
        }
        Ok(BlendCell {
            gru,
            e_plus,
            e_minus,
            latent_dim,
        })
    }

    pub fn embedding(&self, polarity: Polarity) -> ParamId {
        match polarity {
            Polarity::Positive => self.e_plus,
            Polarity::Negative => self.e_minus,
        }
    }

    /// `[e_polarity; z_u; z_c]`.
    pub fn input(&self, store: &ParamStore, polarity: Polarity, z_u: &[f64], z_c: &[f64]) -> Result<Vec<f64>> {
        if z_u.len() != self.latent_dim || z_c.len() != self.latent_dim {
            return Err(Error::dim(format!(
                "blend inputs have {} and {} entries, expected {}",
                z_u.len(),
                z_c.len(),
                self.latent_dim
            )));
        }
        let mut x = Vec::with_capacity(3 * self.latent_dim);
        x.extend_from_slice(store.value(self.embedding(polarity)).as_slice());
        x.extend_from_slice(z_u);
        x.extend_from_slice(z_c);
        Ok(x)
    }

    pub fn step(
        &self,
        store: &ParamStore,
        hidden: &[f64],
        polarity: Polarity,
        z_u: &[f64],
        z_c: &[f64],
    ) -> Result<GruCache> {
        let x = self.input(store, polarity, z_u, z_c)?;
        self.gru.step(store, hidden, &x)
    }
}

/// GRU blender ξ with polarity embeddings e⁺ and e⁻.
#[derive(Clone, Debug)]
pub struct BlendParams {
    pub store: ParamStore,
    pub mode: CritiqueMode,
    pub cell: BlendCell,
}

impl BlendParams {
    pub fn init(latent_dim: usize, mode: CritiqueMode, seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        GruCell::register(&mut store, GRU_PREFIX, 3 * latent_dim, latent_dim, &mut rng)?;
        store.insert_uniform(E_PLUS, latent_dim, 1, latent_dim, &mut rng)?;
        store.insert_uniform(E_MINUS, latent_dim, 1, latent_dim, &mut rng)?;
        Self::from_store(store, mode)
    }

    pub fn from_store(store: ParamStore, mode: CritiqueMode) -> Result<Self> {
        let cell = BlendCell::resolve(&store)?;
        if store.len() != 11 {
            return Err(Error::dim(format!("blender store has {} tensors, expected 11", store.len())));
        }
        Ok(BlendParams { store, mode, cell })
    }

    pub fn latent_dim(&self) -> usize {
        self.cell.latent_dim
    }

    pub fn step(&self, hidden: &[f64], polarity: Polarity, z_u: &[f64], z_c: &[f64]) -> Result<GruCache> {
        self.cell.step(&self.store, hidden, polarity, z_u, z_c)
    }

    /// Checks that this blender can sit on top of `model`.
    pub fn check_compatible(&self, model: &ModelParams) -> Result<()> {
        if self.latent_dim() != model.dims.latent_dim {
            return Err(Error::dim(format!(
                "blender latent size {} vs model {}",
                self.latent_dim(),
                model.dims.latent_dim
            )));
        }
        if self.mode == CritiqueMode::Split && !model.variant.has_expert(Modality::KMinus) {
            return Err(Error::UnsupportedModality {
                modality: Modality::KMinus.to_string(),
                variant: model.variant.to_string(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, model: &ModelParams, config: serde_json::Value, step: u64) -> Result<()> {
        let config = serde_json::json!({ "mode": self.mode, "train": config });
        Checkpoint::new(
            CheckpointKind::Blender,
            model.variant,
            model.dims,
            self.store.clone(),
            config,
            step,
        )
        .save(path)
    }

    /// Loads a blender and validates it against `model`.
    pub fn load(path: impl AsRef<Path>, model: &ModelParams) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        ckpt.expect(CheckpointKind::Blender, Some(model.variant))?;
        let mode: CritiqueMode = serde_json::from_value(ckpt.header.config["mode"].clone())
            .map_err(|e| Error::Checkpoint(format!("blender mode: {e}")))?;
        let blend = Self::from_store(ckpt.store, mode)?;
        blend.check_compatible(model)?;
        Ok(blend)
    }
}

/// Posterior mean of a one-hot keyphrase through the encoder chosen by
/// `mode` and `polarity`.
pub fn encode_critique(
    model: &ModelParams,
    keyphrase: usize,
    polarity: Polarity,
    mode: CritiqueMode,
) -> Result<Vec<f64>> {
    let k = model.dims.n_keyphrases;
    if keyphrase >= k {
        return Err(Error::UnknownKeyphrase(keyphrase.to_string()));
    }
    let modality = match (mode, polarity) {
        (CritiqueMode::Shared, _) | (CritiqueMode::Split, Polarity::Positive) => Modality::KPlus,
        (CritiqueMode::Split, Polarity::Negative) => Modality::KMinus,
    };
    let mut x = vec![0.0; k];
    x[keyphrase] = 1.0;
    Ok(model.posterior(&[(modality, &x)])?.mu)
}

fn check_disjoint(affected: &[usize], unaffected: &[usize]) -> Result<()> {
    let mut a = affected.to_vec();
    a.sort_unstable();
    if unaffected.iter().any(|i| a.binary_search(i).is_ok()) {
        return Err(Error::Config("affected and unaffected item sets overlap".into()));
    }
    Ok(())
}

/// Hinge ranking loss between pre-critique scores `r0` and post-critique
/// scores `r1`. A negative critique asks affected items to drop by at least
/// `margin` and unaffected items to rise by it; a positive one the reverse.
pub fn margin_loss(
    polarity: Polarity,
    r0: &[f64],
    r1: &[f64],
    affected: &[usize],
    unaffected: &[usize],
    margin: f64,
) -> Result<f64> {
    Ok(margin_terms(polarity, r0, r1, affected, unaffected, margin)?.0)
}

/// Loss and `∂loss/∂r1` (r0 is a constant).
pub fn margin_loss_grad(
    polarity: Polarity,
    r0: &[f64],
    r1: &[f64],
    affected: &[usize],
    unaffected: &[usize],
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    margin_terms(polarity, r0, r1, affected, unaffected, margin)
}

fn margin_terms(
    polarity: Polarity,
    r0: &[f64],
    r1: &[f64],
    affected: &[usize],
    unaffected: &[usize],
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    if r0.len() != r1.len() {
        return Err(Error::dim("margin_loss: score vectors differ in length"));
    }
    if !(margin >= 0.0) {
        return Err(Error::Config(format!("margin must be >= 0, got {margin}")));
    }
    if affected.iter().chain(unaffected).any(|&i| i >= r0.len()) {
        return Err(Error::dim("margin_loss: item index out of range"));
    }
    check_disjoint(affected, unaffected)?;
    // sign s: the loss wants s·(r1 − r0) ≥ margin
    let (s_aff, s_unaff) = match polarity {
        Polarity::Negative => (-1.0, 1.0),
        Polarity::Positive => (1.0, -1.0),
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; r0.len()];
    for (set, s) in [(affected, s_aff), (unaffected, s_unaff)] {
        for &i in set {
            let slack = margin - s * (r1[i] - r0[i]);
            if slack > 0.0 {
                loss += slack;
                grad[i] -= s;
            }
        }
    }
    Ok((loss, grad))
}

/// One training pair for the blender, with everything the frozen model
/// contributes precomputed.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub polarity: Polarity,
    pub z_u: Arc<[f64]>,
    pub z_c: Arc<[f64]>,
    /// Item logits decoded from `z_u`.
    pub r0: Arc<[f64]>,
    pub affected: Vec<usize>,
    pub unaffected: Vec<usize>,
}

/// Margin loss of one blend step from a zero hidden state. With
/// `backprop`, gradients for the blender weights are accumulated in
/// `store`; the model is only read.
pub fn example_loss(
    cell: &BlendCell,
    store: &mut ParamStore,
    model: &ModelParams,
    ex: &PreparedExample,
    margin: f64,
    backprop: bool,
) -> Result<f64> {
    let h0 = vec![0.0; cell.latent_dim];
    let gru = cell.step(store, &h0, ex.polarity, &ex.z_u, &ex.z_c)?;
    let dec = model.decode_cached(Modality::R, &gru.output)?;
    let (loss, g_r1) = margin_loss_grad(ex.polarity, &ex.r0, &dec.logits, &ex.affected, &ex.unaffected, margin)?;
    if backprop && loss > 0.0 {
        let dz = model.decode_latent_grad(Modality::R, &dec, &g_r1)?;
        let (_, dx) = cell.gru.backward(store, &gru, &dz)?;
        store
            .grad_mut(cell.embedding(ex.polarity))
            .add_assign(&dx[..cell.latent_dim]);
    }
    Ok(loss)
}

/// Uniform average critiquing: mean of the user latent and every critique
/// latent so far.
pub fn uac_blend(z_u: &[f64], z_cs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if z_cs.iter().any(|z| z.len() != z_u.len()) {
        return Err(Error::dim("uac_blend: latent sizes differ"));
    }
    let n = (1 + z_cs.len()) as f64;
    Ok((0..z_u.len())
        .map(|d| (z_u[d] + z_cs.iter().map(|z| z[d]).sum::<f64>()) / n)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub critique: Critique,
    /// Item logits after this critique.
    pub scores: Vec<f64>,
}

/// Live critiquing state for one user. The GRU hidden state starts at zero
/// and carries over between turns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CritiqueSession {
    pub z_u: Vec<f64>,
    pub hidden: Vec<f64>,
    pub history: Vec<TurnRecord>,
    /// Item logits of the current turn.
    pub scores: Vec<f64>,
    pub initial_scores: Vec<f64>,
    /// Items never recommended (train interactions).
    pub seen: Vec<usize>,
    /// Restricts rankings to these items when set.
    pub candidates: Option<Vec<usize>>,
    pub max_turns: usize,
}

impl CritiqueSession {
    pub fn new(
        model: &ModelParams,
        z_u: Vec<f64>,
        seen: Vec<usize>,
        candidates: Option<Vec<usize>>,
        max_turns: usize,
    ) -> Result<Self> {
        if z_u.len() != model.dims.latent_dim {
            return Err(Error::dim("session latent size"));
        }
        let scores = model.decode(Modality::R, &z_u)?;
        let mut seen = seen;
        seen.sort_unstable();
        seen.dedup();
        Ok(CritiqueSession {
            hidden: vec![0.0; z_u.len()],
            z_u,
            history: Vec::new(),
            initial_scores: scores.clone(),
            scores,
            seen,
            candidates,
            max_turns,
        })
    }

    pub fn turn(&self) -> usize {
        self.history.len()
    }

    /// Embeds `keyphrase`, runs one GRU step and re-scores the items.
    pub fn blend(
        &mut self,
        model: &ModelParams,
        blender: &BlendParams,
        keyphrase: usize,
        polarity: Polarity,
    ) -> Result<&[f64]> {
        if self.turn() >= self.max_turns {
            return Err(Error::TurnLimit {
                max_turns: self.max_turns,
            });
        }
        let z_c = encode_critique(model, keyphrase, polarity, blender.mode)?;
        let cache = blender.step(&self.hidden, polarity, &self.z_u, &z_c)?;
        self.hidden = cache.output;
        self.scores = model.decode(Modality::R, &self.hidden)?;
        self.history.push(TurnRecord {
            critique: Critique {
                keyphrase,
                polarity,
                step: self.turn() + 1,
            },
            scores: self.scores.clone(),
        });
        Ok(&self.scores)
    }

    /// Back to turn 0: hidden state cleared, user latent kept.
    pub fn reset(&mut self) {
        self.hidden.iter_mut().for_each(|h| *h = 0.0);
        self.history.clear();
        self.scores = self.initial_scores.clone();
    }

    /// Rankable items, best first: the candidate pool if any, otherwise every
    /// unseen item.
    pub fn ranking(&self) -> Vec<usize> {
        let pool: Vec<usize> = match &self.candidates {
            Some(c) => c.clone(),
            None => (0..self.scores.len())
                .filter(|i| self.seen.binary_search(i).is_err())
                .collect(),
        };
        crate::evalsim::rank_subset(&self.scores, &pool)
    }

    pub fn top_n(&self, n: usize) -> Vec<usize> {
        let mut r = self.ranking();
        r.truncate(n);
        r
    }
}
