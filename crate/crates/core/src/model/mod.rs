//! The M&Ms-VAE family: encoders, decoders, mixture posterior, objective,
//! training and prediction.

mod elbo;
mod io;
mod network;
mod predict;
mod train;
mod variant;

pub use elbo::{elbo, elbo_loss, ElboOutput, ElboSettings, UserRows};
pub use network::{
    moe_combine, reparameterize, GaussianPosterior, Mode, ModelDims, ModelParams, LOGVAR_MAX, LOGVAR_MIN,
};
pub use predict::{predict, Prediction};
pub use train::{train, EpochRecord, StepRecord, TrainConfig, TrainLog};
pub use variant::{Modality, ModelVariant};
