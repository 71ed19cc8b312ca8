use super::params::ParamStore;
use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Relative error with the `max(|a|, |n|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient written by `loss_fn` against central
/// differences for every scalar in `params`, returning the worst relative
/// error.
///
/// `loss_fn` must return the loss and accumulate its gradient into the
/// gradient half of the store. It is called twice up front; if the two
/// calls disagree the check is rejected, since any randomness inside must be
/// reseeded per call.
pub fn grad_check<F>(mut loss_fn: F, params: &mut ParamStore, eps: f64) -> Result<f64>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step {eps} must be positive")));
    }
    params.zero_grads();
    let base = loss_fn(params)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad.as_slice().to_vec())
        .collect();

    params.zero_grads();
    let again = loss_fn(params)?;
    let repeat_matches = params
        .iter()
        .zip(&analytic)
        .all(|((_, p), a)| p.grad.as_slice() == a.as_slice());
    if base.to_bits() != again.to_bits() || !repeat_matches {
        return Err(Error::CheckInvalid(format!(
            "loss is not deterministic ({base} vs {again})"
        )));
    }
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base}")));
    }

    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst = 0.0f64;
    for (entry, name) in names.iter().enumerate() {
        let len = params.get(name)?.value.len();
        for k in 0..len {
            let original = params.get(name)?.value.as_slice()[k];
            params.get_mut(name)?.value.as_mut_slice()[k] = original + eps;
            let plus = loss_fn(params)?;
            params.get_mut(name)?.value.as_mut_slice()[k] = original - eps;
            let minus = loss_fn(params)?;
            params.get_mut(name)?.value.as_mut_slice()[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[entry][k], numeric);
            if err > worst {
                log::trace!("{name}[{k}]: analytic {} numeric {numeric}", analytic[entry][k]);
                worst = err;
            }
        }
    }

    params.zero_grads();
    for ((_, p), a) in params.iter_mut().zip(&analytic) {
        p.grad.as_mut_slice().copy_from_slice(a);
    }
    Ok(worst)
}
