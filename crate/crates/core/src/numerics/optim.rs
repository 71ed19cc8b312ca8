use serde::{Deserialize, Serialize};

use super::params::ParamStore;

/// Adaptive-moment gradient descent (Kingma & Ba).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently stored in `params`.
    /// Gradients are left untouched; callers zero them.
    pub fn step(&mut self, params: &mut ParamStore) {
        if self.first.len() != params.len() {
            self.first = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for ((_, p), (m, v)) in params
            .iter_mut()
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let grads = p.grad.as_slice().to_vec();
            for (k, w) in p.value.as_mut_slice().iter_mut().enumerate() {
                let g = grads[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.insert("w", DenseMatrix::column(&[1.0, -1.0])).unwrap();
        store.grad_mut(id).add_assign(&[3.0, -0.5]);
        let mut adam = Adam::new(0.1);
        adam.step(&mut store);
        let w = store.value(id).as_slice();
        // bias-corrected first step is lr * sign(g)
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic() {
        let mut store = ParamStore::new();
        let id = store.insert("w", DenseMatrix::column(&[4.0, -3.0])).unwrap();
        let mut adam = Adam::new(0.05);
        for _ in 0..2000 {
            store.zero_grads();
            let w = store.value(id).as_slice().to_vec();
            let g: Vec<f64> = w.iter().map(|v| 2.0 * (v - 1.0)).collect();
            store.grad_mut(id).add_assign(&g);
            adam.step(&mut store);
        }
        for v in store.value(id).as_slice() {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }
}
