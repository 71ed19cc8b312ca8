//! Forward operations with hand-derived backward passes.
//!
//! Every forward returns its output together with whatever the matching
//! backward needs. Backward passes accumulate into the gradient half of the
//! [`ParamStore`] and return the gradient with respect to their input.

use super::matrix::DenseMatrix;
use super::params::{ParamId, ParamStore};
use super::rng::Rng;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Weight/bias pair of a fully connected layer, resolved by name prefix
/// (`{name}.w` is `out x in`, `{name}.b` is `out x 1`).
#[derive(Clone, Copy, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub fn resolve(params: &ParamStore, name: &str) -> Result<Self> {
        let layer = DenseLayer {
            weight: params.id(&format!("{name}.w"))?,
            bias: params.id(&format!("{name}.b"))?,
        };
        let (out, _) = params.value(layer.weight).shape();
        if params.value(layer.bias).shape() != (out, 1) {
            return Err(Error::dim(format!(
                "bias of `{name}` is {:?}, expected ({out}, 1)",
                params.value(layer.bias).shape()
            )));
        }
        Ok(layer)
    }

    /// Registers a freshly initialised `out x in` layer under `name`.
    pub fn register(
        params: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = params.insert_uniform(format!("{name}.w"), outputs, inputs, inputs, rng)?;
        let bias = params.insert_uniform(format!("{name}.b"), outputs, 1, inputs, rng)?;
        Ok(DenseLayer { weight, bias })
    }

    pub fn inputs(&self, params: &ParamStore) -> usize {
        params.value(self.weight).cols()
    }

    pub fn outputs(&self, params: &ParamStore) -> usize {
        params.value(self.weight).rows()
    }

    /// `W·x + b`.
    pub fn linear(&self, params: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = params.value(self.weight).matvec(x)?;
        for (yo, b) in y.iter_mut().zip(params.value(self.bias).as_slice()) {
            *yo += b;
        }
        Ok(y)
    }

    pub fn linear_backward(
        &self,
        params: &mut ParamStore,
        x: &[f64],
        grad_out: &[f64],
    ) -> Result<Vec<f64>> {
        let grad_in = params.value(self.weight).matvec_t(grad_out)?;
        params.grad_mut(self.weight).add_outer(grad_out, x);
        params.grad_mut(self.bias).add_assign(grad_out);
        Ok(grad_in)
    }

    /// `tanh(W·x + b)`.
    pub fn affine_tanh(&self, params: &ParamStore, x: &[f64]) -> Result<AffineTanhCache> {
        let mut y = self.linear(params, x)?;
        y.iter_mut().for_each(|v| *v = v.tanh());
        Ok(AffineTanhCache {
            input: x.to_vec(),
            output: y,
        })
    }

    pub fn affine_tanh_backward(
        &self,
        params: &mut ParamStore,
        cache: &AffineTanhCache,
        grad_out: &[f64],
    ) -> Result<Vec<f64>> {
        if grad_out.len() != cache.output.len() {
            return Err(Error::dim("affine_tanh backward: gradient length"));
        }
        let pre: Vec<f64> = cache
            .output
            .iter()
            .zip(grad_out)
            .map(|(y, g)| g * (1.0 - y * y))
            .collect();
        self.linear_backward(params, &cache.input, &pre)
    }
}

#[derive(Clone, Debug)]
pub struct AffineTanhCache {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

/// Looks up `layer_name` and applies `tanh(W·x + b)`.
pub fn affine_tanh(
    params: &ParamStore,
    layer_name: &str,
    x: &[f64],
) -> Result<(Vec<f64>, AffineTanhCache)> {
    let cache = DenseLayer::resolve(params, layer_name)?.affine_tanh(params, x)?;
    Ok((cache.output.clone(), cache))
}

/// Gated recurrent unit (Cho et al.):
///
/// ```text
/// z  = σ(Wz·x + Uz·h + bz)
/// r  = σ(Wr·x + Ur·h + br)
/// n  = tanh(Wn·x + Un·(r ⊙ h) + bn)
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wn: ParamId,
    un: ParamId,
    bn: ParamId,
}

#[derive(Clone, Debug)]
pub struct GruCache {
    pub h: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub rh: Vec<f64>,
    pub output: Vec<f64>,
}

impl GruCell {
    pub fn register(
        params: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        for gate in ["z", "r", "n"] {
            params.insert_uniform(
                format!("{prefix}.w{gate}"),
                hidden_dim,
                input_dim,
                input_dim,
                rng,
            )?;
            params.insert_uniform(
                format!("{prefix}.u{gate}"),
                hidden_dim,
                hidden_dim,
                hidden_dim,
                rng,
            )?;
            params.insert_uniform(
                format!("{prefix}.b{gate}"),
                hidden_dim,
                1,
                hidden_dim,
                rng,
            )?;
        }
        Self::resolve(params, prefix)
    }

    pub fn resolve(params: &ParamStore, prefix: &str) -> Result<Self> {
        let id = |n: &str| params.id(&format!("{prefix}.{n}"));
        let cell = GruCell {
            wz: id("wz")?,
            uz: id("uz")?,
            bz: id("bz")?,
            wr: id("wr")?,
            ur: id("ur")?,
            br: id("br")?,
            wn: id("wn")?,
            un: id("un")?,
            bn: id("bn")?,
        };
        let hidden = params.value(cell.uz).rows();
        let input = params.value(cell.wz).cols();
        for (w, u, b) in [
            (cell.wz, cell.uz, cell.bz),
            (cell.wr, cell.ur, cell.br),
            (cell.wn, cell.un, cell.bn),
        ] {
            if params.value(w).shape() != (hidden, input)
                || params.value(u).shape() != (hidden, hidden)
                || params.value(b).shape() != (hidden, 1)
            {
                return Err(Error::dim(format!("inconsistent GRU shapes under `{prefix}`")));
            }
        }
        Ok(cell)
    }

    pub fn hidden_dim(&self, params: &ParamStore) -> usize {
        params.value(self.uz).rows()
    }

    pub fn input_dim(&self, params: &ParamStore) -> usize {
        params.value(self.wz).cols()
    }

    fn pre(
        params: &ParamStore,
        w: ParamId,
        u: ParamId,
        b: ParamId,
        x: &[f64],
        h: &[f64],
    ) -> Result<Vec<f64>> {
        let mut a = params.value(w).matvec(x)?;
        let uh = params.value(u).matvec(h)?;
        for ((ai, ui), bi) in a.iter_mut().zip(&uh).zip(params.value(b).as_slice()) {
            *ai += ui + bi;
        }
        Ok(a)
    }

    pub fn step(&self, params: &ParamStore, h: &[f64], x: &[f64]) -> Result<GruCache> {
        let hidden = self.hidden_dim(params);
        if h.len() != hidden || x.len() != self.input_dim(params) {
            return Err(Error::dim(format!(
                "gru_step: h has {} (expected {hidden}), x has {} (expected {})",
                h.len(),
                x.len(),
                self.input_dim(params)
            )));
        }
        let z: Vec<f64> = Self::pre(params, self.wz, self.uz, self.bz, x, h)?
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = Self::pre(params, self.wr, self.ur, self.br, x, h)?
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = Self::pre(params, self.wn, self.un, self.bn, x, &rh)?
            .into_iter()
            .map(f64::tanh)
            .collect();
        let output = (0..hidden)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * n[i])
            .collect();
        Ok(GruCache {
            h: h.to_vec(),
            x: x.to_vec(),
            z,
            r,
            n,
            rh,
            output,
        })
    }

    /// Returns `(dL/dh, dL/dx)`.
    pub fn backward(
        &self,
        params: &mut ParamStore,
        cache: &GruCache,
        grad_out: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let hidden = cache.h.len();
        if grad_out.len() != hidden {
            return Err(Error::dim("gru backward: gradient length"));
        }
        let mut dh: Vec<f64> = (0..hidden).map(|i| grad_out[i] * (1.0 - cache.z[i])).collect();
        let da_z: Vec<f64> = (0..hidden)
            .map(|i| {
                let z = cache.z[i];
                grad_out[i] * (cache.n[i] - cache.h[i]) * z * (1.0 - z)
            })
            .collect();
        let da_n: Vec<f64> = (0..hidden)
            .map(|i| grad_out[i] * cache.z[i] * (1.0 - cache.n[i] * cache.n[i]))
            .collect();

        // candidate branch
        let mut dx = params.value(self.wn).matvec_t(&da_n)?;
        let drh = params.value(self.un).matvec_t(&da_n)?;
        params.grad_mut(self.wn).add_outer(&da_n, &cache.x);
        params.grad_mut(self.un).add_outer(&da_n, &cache.rh);
        params.grad_mut(self.bn).add_assign(&da_n);
        let da_r: Vec<f64> = (0..hidden)
            .map(|i| {
                let r = cache.r[i];
                drh[i] * cache.h[i] * r * (1.0 - r)
            })
            .collect();
        for i in 0..hidden {
            dh[i] += drh[i] * cache.r[i];
        }

        for (w, u, b, da) in [
            (self.wz, self.uz, self.bz, &da_z),
            (self.wr, self.ur, self.br, &da_r),
        ] {
            let dxg = params.value(w).matvec_t(da)?;
            let dhg = params.value(u).matvec_t(da)?;
            params.grad_mut(w).add_outer(da, &cache.x);
            params.grad_mut(u).add_outer(da, &cache.h);
            params.grad_mut(b).add_assign(da);
            dx.iter_mut().zip(&dxg).for_each(|(a, b)| *a += b);
            dh.iter_mut().zip(&dhg).for_each(|(a, b)| *a += b);
        }
        Ok((dh, dx))
    }
}

/// One GRU step using the cell registered under `prefix`.
pub fn gru_step(params: &ParamStore, prefix: &str, h: &[f64], x: &[f64]) -> Result<GruCache> {
    GruCell::resolve(params, prefix)?.step(params, h, x)
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::dim(format!(
            "gaussian_kl: mu has {} entries, logvar {}",
            mu.len(),
            logvar.len()
        )));
    }
    if mu.iter().chain(logvar).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("gaussian_kl: non-finite input".into()));
    }
    Ok(0.5
        * mu.iter()
            .zip(logvar)
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum::<f64>())
}

/// Gradient of [`gaussian_kl`] as `(d/dmu, d/dlogvar)`.
pub fn gaussian_kl_grad(mu: &[f64], logvar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        mu.to_vec(),
        logvar.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLik {
    pub value: f64,
    /// Set when every target is zero; the value is then 0.
    pub degenerate: bool,
}

/// `Σ targets_i · log softmax(logits)_i`.
pub fn multinomial_loglik(logits: &[f64], targets: &[f64]) -> Result<LogLik> {
    if logits.len() != targets.len() {
        return Err(Error::dim(format!(
            "multinomial_loglik: {} logits, {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("multinomial_loglik: non-finite logits".into()));
    }
    if targets.iter().all(|&t| t == 0.0) {
        return Ok(LogLik {
            value: 0.0,
            degenerate: true,
        });
    }
    let value = log_softmax(logits)
        .iter()
        .zip(targets)
        .map(|(l, t)| t * l)
        .sum();
    Ok(LogLik {
        value,
        degenerate: false,
    })
}

/// Gradient of [`multinomial_loglik`] with respect to the logits.
pub fn multinomial_loglik_grad(logits: &[f64], targets: &[f64]) -> Vec<f64> {
    let total: f64 = targets.iter().sum();
    softmax(logits)
        .iter()
        .zip(targets)
        .map(|(p, t)| t - total * p)
        .collect()
}

pub fn identity_layer(params: &mut ParamStore, name: &str, n: usize) -> Result<DenseLayer> {
    let weight = params.insert(format!("{name}.w"), DenseMatrix::identity(n))?;
    let bias = params.insert(format!("{name}.b"), DenseMatrix::zeros(n, 1))?;
    Ok(DenseLayer { weight, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check, FD_STEP};

    fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn affine_tanh_trivial_cases() {
        let mut params = ParamStore::new();
        identity_layer(&mut params, "id", 3).unwrap();
        let (y, _) = affine_tanh(&params, "id", &[0.0; 3]).unwrap();
        assert_eq!(y, vec![0.0; 3]);

        let mut params = ParamStore::new();
        params.insert("zero.w", DenseMatrix::zeros(2, 3)).unwrap();
        params.insert("zero.b", DenseMatrix::zeros(2, 1)).unwrap();
        let (y, _) = affine_tanh(&params, "zero", &[0.3, -2.0, 7.0]).unwrap();
        assert_eq!(y, vec![0.0; 2]);
        assert!(matches!(
            affine_tanh(&params, "zero", &[1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn affine_tanh_input_gradient_matches_central_differences() {
        let mut rng = Rng::new(11);
        let mut params = ParamStore::new();
        let layer = DenseLayer::register(&mut params, "l", 3, 4, &mut rng).unwrap();
        let x = random_vec(&mut rng, 3);
        let weights = random_vec(&mut rng, 4);
        let loss = |params: &ParamStore, x: &[f64]| -> f64 {
            let y = layer.affine_tanh(params, x).unwrap().output;
            y.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let cache = layer.affine_tanh(&params, &x).unwrap();
        let grad_in = layer
            .affine_tanh_backward(&mut params, &cache, &weights)
            .unwrap();
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += FD_STEP;
            xm[i] -= FD_STEP;
            let numeric = (loss(&params, &xp) - loss(&params, &xm)) / (2.0 * FD_STEP);
            let rel = (numeric - grad_in[i]).abs() / numeric.abs().max(grad_in[i].abs()).max(1e-8);
            assert!(rel < 1e-5, "input {i}: rel err {rel}");
        }
    }

    #[test]
    fn gru_zero_weights_halve_state() {
        let mut params = ParamStore::new();
        let mut rng = Rng::new(0);
        let cell = GruCell::register(&mut params, "gru", 4, 3, &mut rng).unwrap();
        for (_, p) in params.iter_mut() {
            p.value.fill(0.0);
        }
        let h0 = vec![0.4, -1.2, 2.0];
        let out = cell.step(&params, &h0, &[1.0, 2.0, 3.0, 4.0]).unwrap().output;
        assert_eq!(out, vec![0.2, -0.6, 1.0]);
        let out = cell.step(&params, &[0.0; 3], &[1.0; 4]).unwrap().output;
        assert_eq!(out, vec![0.0; 3]);
        assert!(cell.step(&params, &[0.0; 2], &[1.0; 4]).is_err());
    }

    #[test]
    fn gru_output_within_state_candidate_hull() {
        let mut rng = Rng::new(5);
        let mut params = ParamStore::new();
        let cell = GruCell::register(&mut params, "gru", 6, 4, &mut rng).unwrap();
        for _ in 0..50 {
            let h = random_vec(&mut rng, 4);
            let x = random_vec(&mut rng, 6);
            let c = cell.step(&params, &h, &x).unwrap();
            for i in 0..4 {
                let lo = c.h[i].min(c.n[i]) - 1e-15;
                let hi = c.h[i].max(c.n[i]) + 1e-15;
                assert!(c.output[i] >= lo && c.output[i] <= hi);
            }
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        let mut params = ParamStore::new();
        let cell = GruCell::register(&mut params, "gru", 5, 3, &mut rng).unwrap();
        // h and x enter as parameters so one check covers every input
        params
            .insert("h", DenseMatrix::column(&random_vec(&mut rng, 3)))
            .unwrap();
        params
            .insert("x", DenseMatrix::column(&random_vec(&mut rng, 5)))
            .unwrap();
        let proj = random_vec(&mut rng, 3);
        let h_id = params.id("h").unwrap();
        let x_id = params.id("x").unwrap();
        let err = grad_check(
            |p: &mut ParamStore| {
                let h = p.value(h_id).as_slice().to_vec();
                let x = p.value(x_id).as_slice().to_vec();
                let cache = cell.step(p, &h, &x)?;
                let loss = cache.output.iter().zip(&proj).map(|(a, b)| a * b).sum();
                let (dh, dx) = cell.backward(p, &cache, &proj)?;
                p.grad_mut(h_id).add_assign(&dh);
                p.grad_mut(x_id).add_assign(&dx);
                Ok(loss)
            },
            &mut params,
            FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-4, "gru rel err {err}");
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(gaussian_kl(&[1.0], &[0.0, 1.0]).is_err());
        assert!(gaussian_kl(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn multinomial_uniform_and_degenerate() {
        let ll = multinomial_loglik(&[0.3; 4], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((ll.value - (0.25f64).ln()).abs() < 1e-12);
        let ll = multinomial_loglik(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!(ll.degenerate);
        assert_eq!(ll.value, 0.0);
    }

    #[test]
    fn multinomial_gradient_matches_central_differences() {
        let mut rng = Rng::new(8);
        let logits = random_vec(&mut rng, 6);
        let targets = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let g = multinomial_loglik_grad(&logits, &targets);
        for i in 0..6 {
            let mut lp = logits.clone();
            let mut lm = logits.clone();
            lp[i] += FD_STEP;
            lm[i] -= FD_STEP;
            let numeric = (multinomial_loglik(&lp, &targets).unwrap().value
                - multinomial_loglik(&lm, &targets).unwrap().value)
                / (2.0 * FD_STEP);
            let rel = (numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-5, "logit {i}: rel err {rel}");
        }
    }
}
