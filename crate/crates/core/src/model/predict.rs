use serde::{Deserialize, Serialize};

use super::elbo::UserRows;
use super::network::{GaussianPosterior, ModelParams};
use super::variant::Modality;
use crate::dataio::InteractionData;
use crate::error::{Error, Result};
use crate::evalsim::metrics::rank_desc;

/// Recommendation and explanation for one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user: usize,
    /// Item logits.
    pub scores: Vec<f64>,
    /// Keyphrase logits.
    pub explanation: Vec<f64>,
    /// Unseen items, best first.
    pub top_items: Vec<usize>,
    /// Keyphrases, best first.
    pub top_keyphrases: Vec<usize>,
}

impl ModelParams {
    /// Posterior over every expert the variant has, fed with the user's
    /// train interactions, likes and dislikes.
    pub fn user_posterior(&self, data: &InteractionData, user: usize) -> Result<GaussianPosterior> {
        if user >= data.n_users() {
            return Err(Error::UnknownUser(user.to_string()));
        }
        let rows = UserRows::from_data(data, user);
        let observed: Vec<(Modality, &[f64])> = self
            .variant
            .experts()
            .iter()
            .map(|&m| (m, rows.get(m)))
            .collect();
        self.posterior(&observed)
    }

    /// Posterior from a liked-keyphrase profile alone.
    pub fn cold_posterior(&self, kplus: &[f64]) -> Result<GaussianPosterior> {
        if kplus.len() != self.dims.n_keyphrases {
            return Err(Error::dim("cold profile width"));
        }
        self.posterior(&[(Modality::KPlus, kplus)])
    }

    /// Item and keyphrase logits at latent `z`.
    pub fn scores_at(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.decode(Modality::R, z)?, self.decode(Modality::KPlus, z)?))
    }
}

/// Deterministic (eval-mode) recommendation for a known user. Train items
/// never appear in `top_items`.
pub fn predict(params: &ModelParams, data: &InteractionData, user: usize) -> Result<Prediction> {
    let post = params.user_posterior(data, user)?;
    let (scores, explanation) = params.scores_at(&post.mu)?;
    let seen = data.train.row(user);
    let top_items = rank_desc(&scores)
        .into_iter()
        .filter(|i| seen.binary_search(i).is_err())
        .collect();
    let top_keyphrases = rank_desc(&explanation);
    Ok(Prediction {
        user,
        scores,
        explanation,
        top_items,
        top_keyphrases,
    })
}
