//! Dense math with hand-written gradients.

pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;

pub use gradcheck::{grad_check, relative_error, FD_STEP};
pub use matrix::{dot, DenseMatrix};
pub use ops::{
    affine_tanh, gaussian_kl, gaussian_kl_grad, gru_step, log_softmax, multinomial_loglik,
    multinomial_loglik_grad, sigmoid, softmax, AffineTanhCache, DenseLayer, GruCache, GruCell,
    LogLik,
};
pub use optim::Adam;
pub use params::{Param, ParamId, ParamStore};
pub use rng::Rng;
