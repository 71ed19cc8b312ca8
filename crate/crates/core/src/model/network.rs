use serde::{Deserialize, Serialize};

use super::variant::{Modality, ModelVariant};
use crate::error::{Error, Result};
use crate::numerics::{AffineTanhCache, DenseLayer, ParamStore, Rng};

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Dropout on, sampled latents.
    Train,
    /// Deterministic: no dropout, latent is the posterior mean.
    Eval,
}

/// Diagonal Gaussian over the latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianPosterior {
    pub fn standard(dim: usize) -> Self {
        GaussianPosterior {
            mu: vec![0.0; dim],
            logvar: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Mixture-of-experts combination: arithmetic mean of the means and of the
/// variances. A single expert, or identical experts, come back unchanged.
pub fn moe_combine(posteriors: &[GaussianPosterior]) -> Result<GaussianPosterior> {
    let first = posteriors
        .first()
        .ok_or_else(|| Error::Config("moe_combine needs at least one expert".into()))?;
    let dim = first.dim();
    if posteriors
        .iter()
        .any(|p| p.mu.len() != dim || p.logvar.len() != dim)
    {
        return Err(Error::dim("moe_combine: experts disagree on latent size"));
    }
    if posteriors.len() == 1 {
        return Ok(first.clone());
    }
    let n = posteriors.len() as f64;
    let mut mu = vec![0.0; dim];
    let mut logvar = vec![0.0; dim];
    for d in 0..dim {
        // sorted sums make the result independent of expert order
        let mut m: Vec<f64> = posteriors.iter().map(|p| p.mu[d]).collect();
        m.sort_by(f64::total_cmp);
        mu[d] = if m[0] == m[m.len() - 1] { m[0] } else { m.iter().sum::<f64>() / n };
        let mut lv: Vec<f64> = posteriors.iter().map(|p| p.logvar[d]).collect();
        lv.sort_by(f64::total_cmp);
        let max = lv[lv.len() - 1];
        let mean_exp = lv.iter().map(|v| (v - max).exp()).sum::<f64>() / n;
        logvar[d] = max + mean_exp.ln();
    }
    Ok(GaussianPosterior { mu, logvar })
}

/// `z = mu + exp(logvar / 2) ⊙ ε`; returns `(z, ε)`. In eval mode `z = mu`
/// and no draws are consumed.
pub fn reparameterize(post: &GaussianPosterior, rng: &mut Rng, mode: Mode) -> (Vec<f64>, Vec<f64>) {
    match mode {
        Mode::Eval => (post.mu.clone(), vec![0.0; post.dim()]),
        Mode::Train => {
            let eps: Vec<f64> = (0..post.dim()).map(|_| rng.normal()).collect();
            let z = post
                .mu
                .iter()
                .zip(&post.logvar)
                .zip(&eps)
                .map(|((m, lv), e)| m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e)
                .collect();
            (z, eps)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Encoder {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
    pub mu: DenseLayer,
    pub logvar: DenseLayer,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Decoder {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
    pub out: DenseLayer,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderCache {
    pub h1: AffineTanhCache,
    pub h2: AffineTanhCache,
    pub raw_logvar: Vec<f64>,
    pub posterior: GaussianPosterior,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderCache {
    pub h1: AffineTanhCache,
    pub h2: AffineTanhCache,
    pub logits: Vec<f64>,
}

impl Encoder {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Encoder {
            l1: DenseLayer::resolve(store, &format!("{prefix}.l1"))?,
            l2: DenseLayer::resolve(store, &format!("{prefix}.l2"))?,
            mu: DenseLayer::resolve(store, &format!("{prefix}.mu"))?,
            logvar: DenseLayer::resolve(store, &format!("{prefix}.logvar"))?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<EncoderCache> {
        let h1 = self.l1.affine_tanh(store, x)?;
        let h2 = self.l2.affine_tanh(store, &h1.output)?;
        let mu = self.mu.linear(store, &h2.output)?;
        let raw_logvar = self.logvar.linear(store, &h2.output)?;
        let logvar = raw_logvar
            .iter()
            .map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX))
            .collect();
        Ok(EncoderCache {
            h1,
            h2,
            raw_logvar,
            posterior: GaussianPosterior { mu, logvar },
        })
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &EncoderCache,
        grad_mu: &[f64],
        grad_logvar: &[f64],
    ) -> Result<()> {
        // clamped coordinates pass no gradient
        let grad_logvar: Vec<f64> = grad_logvar
            .iter()
            .zip(&cache.raw_logvar)
            .map(|(g, raw)| {
                if (LOGVAR_MIN..=LOGVAR_MAX).contains(raw) {
                    *g
                } else {
                    0.0
                }
            })
            .collect();
        let mut dh2 = self.mu.linear_backward(store, &cache.h2.output, grad_mu)?;
        let d_lv = self
            .logvar
            .linear_backward(store, &cache.h2.output, &grad_logvar)?;
        dh2.iter_mut().zip(&d_lv).for_each(|(a, b)| *a += b);
        let dh1 = self.l2.affine_tanh_backward(store, &cache.h2, &dh2)?;
        self.l1.affine_tanh_backward(store, &cache.h1, &dh1)?;
        Ok(())
    }
}

impl Decoder {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Decoder {
            l1: DenseLayer::resolve(store, &format!("{prefix}.l1"))?,
            l2: DenseLayer::resolve(store, &format!("{prefix}.l2"))?,
            out: DenseLayer::resolve(store, &format!("{prefix}.out"))?,
        })
    }

    pub fn forward(&self, store: &ParamStore, z: &[f64]) -> Result<DecoderCache> {
        let h1 = self.l1.affine_tanh(store, z)?;
        let h2 = self.l2.affine_tanh(store, &h1.output)?;
        let logits = self.out.linear(store, &h2.output)?;
        Ok(DecoderCache { h1, h2, logits })
    }

    /// Returns the gradient with respect to the latent input.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &DecoderCache,
        grad_logits: &[f64],
    ) -> Result<Vec<f64>> {
        let dh2 = self.out.linear_backward(store, &cache.h2.output, grad_logits)?;
        let dh1 = self.l2.affine_tanh_backward(store, &cache.h2, &dh2)?;
        self.l1.affine_tanh_backward(store, &cache.h1, &dh1)
     }

    /// Gradient with respect to the latent input only; weights are read,
    /// never written.
    pub fn latent_grad(&self, store: &ParamStore, cache: &DecoderCache, grad_logits: &[f64]) -> Result<Vec<f64>> {
        let through = |layer: &DenseLayer, out: &[f64], g: &[f64]| -> Result<Vec<f64>> {
            let pre: Vec<f64> = out.iter().zip(g).map(|(y, g)| g * (1.0 - y * y)).collect();
            store.value(layer.weight).matvec_t(&pre)
        };
        let dh2 = store.value(self.out.weight).matvec_t(grad_logits)?;
        let dh1 = through(&self.l2, &cache.h2.output, &dh2)?;
        through(&self.l1, &cache.h1.output, &dh1)
    }
}

/// Shape of a model family member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_items: usize,
    pub n_keyphrases: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
}

impl ModelDims {
    /// Hidden width defaults to twice the latent size.
    pub fn new(n_items: usize, n_keyphrases: usize, latent_dim: usize) -> Self {
        ModelDims {
            n_items,
            n_keyphrases,
            latent_dim,
            hidden_dim: 2 * latent_dim,
        }
    }

    pub fn width(&self, m: Modality) -> usize {
        match m {
            Modality::R => self.n_items,
            Modality::KPlus | Modality::KMinus => self.n_keyphrases,
        }
    }
}

/// All encoder/decoder weights of one variant.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub variant: ModelVariant,
    pub dims: ModelDims,
    pub store: ParamStore,
    /// Optimisation steps taken so far; drives the KL schedule on resume.
    pub step: u64,
    encoders: [Option<Encoder>; 3],
    decoders: [Option<Decoder>; 3],
}

fn encoder_prefix(m: Modality) -> String {
    format!("enc.{}", m.tag())
}

fn decoder_prefix(m: Modality) -> String {
    format!("dec.{}", m.tag())
}

impl ModelParams {
    /// Fresh weights, uniform in `±1/sqrt(fan_in)`.
    pub fn init(variant: ModelVariant, dims: ModelDims, seed: u64) -> Result<Self> {
        if dims.latent_dim == 0 || dims.hidden_dim == 0 || dims.n_items == 0 || dims.n_keyphrases == 0 {
            return Err(Error::Config(format!("degenerate model dimensions {dims:?}")));
        }
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let (h, hid) = (dims.latent_dim, dims.hidden_dim);
        for &m in variant.experts() {
            let p = encoder_prefix(m);
            DenseLayer::register(&mut store, &format!("{p}.l1"), dims.width(m), hid, &mut rng)?;
            DenseLayer::register(&mut store, &format!("{p}.l2"), hid, hid, &mut rng)?;
            DenseLayer::register(&mut store, &format!("{p}.mu"), hid, h, &mut rng)?;
            DenseLayer::register(&mut store, &format!("{p}.logvar"), hid, h, &mut rng)?;
        }
        for &m in variant.decoders() {
            let p = decoder_prefix(m);
            DenseLayer::register(&mut store, &format!("{p}.l1"), h, hid, &mut rng)?;
            DenseLayer::register(&mut store, &format!("{p}.l2"), hid, hid, &mut rng)?;
            DenseLayer::register(&mut store, &format!("{p}.out"), hid, dims.width(m), &mut rng)?;
        }
        Self::from_store(variant, dims, store, 0)
    }

    /// Wraps an existing store, checking that exactly the variant's networks
    /// are present with consistent shapes.
    pub fn from_store(variant: ModelVariant, dims: ModelDims, store: ParamStore, step: u64) -> Result<Self> {
        let mut encoders = [None, None, None];
        let mut decoders = [None, None, None];
        let mut expected = 0;
        for m in Modality::ALL {
            if variant.has_expert(m) {
                let enc = Encoder::resolve(&store, &encoder_prefix(m))?;
                let ok = enc.l1.inputs(&store) == dims.width(m)
                    && enc.l1.outputs(&store) == dims.hidden_dim
                    && enc.l2.inputs(&store) == dims.hidden_dim
                    && enc.l2.outputs(&store) == dims.hidden_dim
                    && enc.mu.outputs(&store) == dims.latent_dim
                    && enc.logvar.outputs(&store) == dims.latent_dim
                    && enc.mu.inputs(&store) == dims.hidden_dim
                    && enc.logvar.inputs(&store) == dims.hidden_dim;
                if !ok {
                    return Err(Error::dim(format!("encoder {m} does not match {dims:?}")));
                }
                encoders[m.slot()] = Some(enc);
                expected += 8;
            }
            if variant.has_decoder(m) {
                let dec = Decoder::resolve(&store, &decoder_prefix(m))?;
                let ok = dec.l1.inputs(&store) == dims.latent_dim
                    && dec.l1.outputs(&store) == dims.hidden_dim
                    && dec.l2.inputs(&store) == dims.hidden_dim
                    && dec.l2.outputs(&store) == dims.hidden_dim
                    && dec.out.inputs(&store) == dims.hidden_dim
                    && dec.out.outputs(&store) == dims.width(m);
                if !ok {
                    return Err(Error::dim(format!("decoder {m} does not match {dims:?}")));
                }
                decoders[m.slot()] = Some(dec);
                expected += 6;
            }
        }
        if store.len() != expected {
            return Err(Error::dim(format!(
                "variant {variant} expects {expected} tensors, store has {}",
                store.len()
            )));
        }
        Ok(ModelParams {
            variant,
            dims,
            store,
            step,
            encoders,
            decoders,
        })
    }

    pub(crate) fn encoder(&self, m: Modality) -> Result<Encoder> {
        self.encoders[m.slot()].ok_or_else(|| Error::UnsupportedModality {
            modality: m.to_string(),
            variant: self.variant.to_string(),
        })
    }

    pub(crate) fn decoder(&self, m: Modality) -> Result<Decoder> {
        self.decoders[m.slot()].ok_or_else(|| Error::UnsupportedModality {
            modality: m.to_string(),
            variant: self.variant.to_string(),
        })
    }

    pub fn has_decoder_params(&self, m: Modality) -> bool {
        self.store.names().any(|n| n.starts_with(&format!("{}.", decoder_prefix(m))))
    }

    /// One expert's posterior for input `x`. Dropout is applied to `x` only
    /// in train mode.
    pub fn encode(
        &self,
        modality: Modality,
        x: &[f64],
        mode: Mode,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<GaussianPosterior> {
        let enc = self.encoder(modality)?;
        let x = apply_dropout(x, mode, dropout, rng);
        Ok(enc.forward(&self.store, &x)?.posterior)
    }

    /// Deterministic posterior from the given observed rows.
    pub fn posterior(&self, observed: &[(Modality, &[f64])]) -> Result<GaussianPosterior> {
        let mut rng = Rng::new(0);
        let experts = observed
            .iter()
            .map(|(m, x)| self.encode(*m, x, Mode::Eval, 0.0, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        moe_combine(&experts)
    }

    pub(crate) fn decode_cached(&self, modality: Modality, z: &[f64]) -> Result<DecoderCache> {
        self.decoder(modality)?.forward(&self.store, z)
    }

    /// Pulls a logit gradient back to the latent through frozen weights.
    pub(crate) fn decode_latent_grad(
        &self,
        modality: Modality,
        cache: &DecoderCache,
        grad_logits: &[f64],
    ) -> Result<Vec<f64>> {
        self.decoder(modality)?.latent_grad(&self.store, cache, grad_logits)
    }

    /// Logits of a decoder.
    pub fn decode(&self, modality: Modality, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decoder(modality)?.forward(&self.store, z)?.logits)
    }
}

/// Inverted dropout on an input vector.
pub(crate) fn apply_dropout(x: &[f64], mode: Mode, rate: f64, rng: &mut Rng) -> Vec<f64> {
    if mode == Mode::Eval || rate <= 0.0 {
        return x.to_vec();
    }
    let keep = 1.0 - rate;
    x.iter()
        .map(|v| if rng.bernoulli(keep) { v / keep } else { 0.0 })
        .collect()
}
