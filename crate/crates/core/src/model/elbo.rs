use serde::{Deserialize, Serialize};

use super::network::{
    apply_dropout, moe_combine, reparameterize, DecoderCache, EncoderCache, GaussianPosterior, Mode,
    ModelParams,
};
use super::variant::Modality;
use crate::dataio::InteractionData;
use crate::error::{Error, Result};
use crate::numerics::{gaussian_kl, gaussian_kl_grad, multinomial_loglik, multinomial_loglik_grad, Rng};

/// Full binary rows of one user for every modality.
#[derive(Clone, Debug, PartialEq)]
pub struct UserRows {
    pub r: Vec<f64>,
    pub kplus: Vec<f64>,
    pub kminus: Vec<f64>,
}

impl UserRows {
    /// Train interactions, likes and their complement.
    pub fn from_data(data: &InteractionData, user: usize) -> Self {
        UserRows {
            r: data.r_row(user),
            kplus: data.kplus_row(user),
            kminus: data.kminus_row(user),
        }
    }

    pub fn get(&self, m: Modality) -> &[f64] {
        match m {
            Modality::R => &self.r,
            Modality::KPlus => &self.kplus,
            Modality::KMinus => &self.kminus,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboOutput {
    /// Negative ELBO: `−Σ loglik + β·KL`.
    pub loss: f64,
    pub kl: f64,
    /// Log-likelihood per decoded modality.
    pub recon: Vec<(Modality, f64)>,
}

impl ElboOutput {
    pub fn recon_total(&self) -> f64 {
        self.recon.iter().map(|(_, v)| v).sum()
    }
}

/// Per-call knobs of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboSettings {
    pub beta: f64,
    pub dropout: f64,
    pub mode: Mode,
}

impl ElboSettings {
    pub fn eval(beta: f64) -> Self {
        ElboSettings {
            beta,
            dropout: 0.0,
            mode: Mode::Eval,
        }
    }

    pub fn train(beta: f64, dropout: f64) -> Self {
        ElboSettings {
            beta,
            dropout,
            mode: Mode::Train,
        }
    }
}

struct Forward {
    experts: Vec<(Modality, EncoderCache)>,
    mixture: GaussianPosterior,
    eps: Vec<f64>,
    decoded: Vec<(Modality, DecoderCache)>,
    output: ElboOutput,
}

fn forward(
    params: &ModelParams,
    observed: &[Modality],
    inputs: &UserRows,
    targets: &UserRows,
    settings: &ElboSettings,
    rng: &mut Rng,
) -> Result<Forward> {
    let ElboSettings { beta, dropout, mode } = *settings;
    if observed.is_empty() {
        return Err(Error::Config("ELBO needs at least one observed modality".into()));
    }
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
    }
    for &m in observed {
        params.variant.check_expert(m)?;
    }
    let mut experts = Vec::with_capacity(observed.len());
    for &m in observed {
        let x = apply_dropout(inputs.get(m), mode, dropout, rng);
        experts.push((m, params.encoder(m)?.forward(&params.store, &x)?));
    }
    let posteriors: Vec<GaussianPosterior> = experts.iter().map(|(_, c)| c.posterior.clone()).collect();
    let mixture = moe_combine(&posteriors)?;
    let (z, eps) = reparameterize(&mixture, rng, mode);

    let mut decoded = Vec::with_capacity(params.variant.decoders().len());
    let mut recon = Vec::with_capacity(decoded.capacity());
    let mut loss = 0.0;
    for &m in params.variant.decoders() {
        let cache = params.decoder(m)?.forward(&params.store, &z)?;
        let ll = multinomial_loglik(&cache.logits, targets.get(m))?;
        loss -= ll.value;
        recon.push((m, ll.value));
        decoded.push((m, cache));
    }
    let kl = gaussian_kl(&mixture.mu, &mixture.logvar)?;
    loss += beta * kl;
    Ok(Forward {
        experts,
        mixture,
        eps,
        decoded,
        output: ElboOutput { loss, kl, recon },
    })
}

/// Negative ELBO for one user with the posterior built from `observed`
/// experts only. Targets are always the full rows.
pub fn elbo_loss(
    params: &ModelParams,
    observed: &[Modality],
    inputs: &UserRows,
    targets: &UserRows,
    settings: &ElboSettings,
    rng: &mut Rng,
) -> Result<ElboOutput> {
    Ok(forward(params, observed, inputs, targets, settings, rng)?.output)
}

/// As [`elbo_loss`], additionally accumulating `∂loss/∂θ` into the
/// parameter store.
pub fn elbo(
    params: &mut ModelParams,
    observed: &[Modality],
    inputs: &UserRows,
    targets: &UserRows,
    settings: &ElboSettings,
    rng: &mut Rng,
) -> Result<ElboOutput> {
    let fwd = forward(params, observed, inputs, targets, settings, rng)?;
    let dim = params.dims.latent_dim;
    let beta = settings.beta;

    let mut dz = vec![0.0; dim];
    for (m, cache) in &fwd.decoded {
        let g: Vec<f64> = multinomial_loglik_grad(&cache.logits, targets.get(*m))
            .into_iter()
            .map(|v| -v)
            .collect();
        let d = params.decoder(*m)?.backward(&mut params.store, cache, &g)?;
        dz.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }

    let (kl_mu, kl_lv) = gaussian_kl_grad(&fwd.mixture.mu, &fwd.mixture.logvar);
    let mut dmu: Vec<f64> = kl_mu.iter().map(|g| beta * g).collect();
    let mut dlv: Vec<f64> = kl_lv.iter().map(|g| beta * g).collect();
    for d in 0..dim {
        dmu[d] += dz[d];
        let lv = fwd.mixture.logvar[d].clamp(super::network::LOGVAR_MIN, super::network::LOGVAR_MAX);
        dlv[d] += dz[d] * fwd.eps[d] * 0.5 * (0.5 * lv).exp();
    }

    // mixture: mean of means, log of mean variance
    let n = fwd.experts.len() as f64;
    for (idx, (m, cache)) in fwd.experts.iter().enumerate() {
        let mut g_mu = vec![0.0; dim];
        let mut g_lv = vec![0.0; dim];
        for d in 0..dim {
            if fwd.experts.len() == 1 {
                g_mu[d] = dmu[d];
                g_lv[d] = dlv[d];
                continue;
            }
            g_mu[d] = dmu[d] / n;
            let max = fwd
                .experts
                .iter()
                .map(|(_, c)| c.posterior.logvar[d])
                .fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = fwd
                .experts
                .iter()
                .map(|(_, c)| (c.posterior.logvar[d] - max).exp())
                .sum();
            let weight = (fwd.experts[idx].1.posterior.logvar[d] - max).exp() / total;
            g_lv[d] = dlv[d] * weight;
        }
        params
            .encoder(*m)?
            .backward(&mut params.store, cache, &g_mu, &g_lv)?;
    }
    Ok(fwd.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::ModelDims;
    use crate::model::ModelVariant;
    use crate::numerics::log_softmax;

    fn rows() -> UserRows {
        UserRows {
            r: vec![1.0, 0.0, 1.0, 0.0, 1.0],
            kplus: vec![0.0, 1.0, 1.0, 0.0],
            kminus: vec![1.0, 0.0, 0.0, 1.0],
        }
    }

    #[test]
    fn zero_beta_is_reconstruction_only() {
        let p = ModelParams::init(ModelVariant::MmsPlus, ModelDims::new(5, 4, 3), 2).unwrap();
        let out = elbo_loss(&p, &[Modality::R], &rows(), &rows(), &ElboSettings::train(0.0, 0.0), &mut Rng::new(1)).unwrap();
        assert!((out.loss + out.recon_total()).abs() < 1e-12);
        assert!(out.kl > 0.0);
    }

    #[test]
    fn zero_heads_mean_no_kl() {
        let mut p = ModelParams::init(ModelVariant::Mms, ModelDims::new(5, 4, 3), 2).unwrap();
        for (name, param) in p.store.iter_mut() {
            if name.contains(".mu.") || name.contains(".logvar.") {
                param.value.fill(0.0);
            }
        }
        let out = elbo_loss(&p, &[Modality::R, Modality::KPlus], &rows(), &rows(), &ElboSettings::eval(0.7), &mut Rng::new(1)).unwrap();
        assert_eq!(out.kl, 0.0);
        assert!((out.loss + out.recon_total()).abs() < 1e-12);
        // eval mode decodes z = 0
        let expected: f64 = log_softmax(&p.decode(Modality::R, &[0.0; 3]).unwrap())
            .iter()
            .zip(&rows().r)
            .map(|(l, t)| l * t)
            .sum();
        assert!((out.recon[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let p = ModelParams::init(ModelVariant::Mms, ModelDims::new(5, 4, 3), 2).unwrap();
        let r = rows();
        let mut rng = Rng::new(0);
        assert!(matches!(
            elbo_loss(&p, &[Modality::KMinus], &r, &r, &ElboSettings::eval(0.1), &mut rng),
            Err(Error::UnsupportedModality { .. })
        ));
        assert!(matches!(
            elbo_loss(&p, &[Modality::R], &r, &r, &ElboSettings::eval(-0.1), &mut rng),
            Err(Error::Config(_))
        ));
        assert!(elbo_loss(&p, &[], &r, &r, &ElboSettings::eval(0.1), &mut rng).is_err());
    }
}
