//! Bias-corrected Adam.

use crate::autodiff::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParameterStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in `store`.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || grads.len() != self.first.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} gradients, {} parameters, {} moment slots",
                    grads.len(),
                    store.len(),
                    self.first.len()
                ),
            ));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("{}: {:?} vs {:?}", store.name(id), g.shape(), store.get(id).shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, id) in store.ids().enumerate() {
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::new();
        for (i, &v) in values.iter().enumerate() {
            s.insert(format!("p{i}"), Tensor::scalar(v));
        }
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = store(&[0.5, -1.0]);
        let before = s.clone();
        let mut adam = AdamState::new(&s, 0.1);
        for _ in 0..3 {
            adam.step(&mut s, &[Tensor::scalar(0.0), Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(s, before);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        let mut s = store(&[1.0]);
        let mut adam = AdamState::new(&s, 0.1);
        adam.step(&mut s, &[Tensor::scalar(1.0)]).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(s.id("p0").unwrap()).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut s = store(&[0.3, 0.3]);
        let mut adam = AdamState::new(&s, 0.01);
        for g in [0.2, -0.7, 1.3] {
            adam.step(&mut s, &[Tensor::scalar(g), Tensor::scalar(g)]).unwrap();
        }
        let v: Vec<f64> = s.iter().map(|(_, t)| t.item()).collect();
        assert_eq!(v[0].to_bits(), v[1].to_bits());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = store(&[0.0]);
        let mut adam = AdamState::new(&s, 0.1);
        let err = adam.step(&mut s, &[Tensor::zeros(&[2])]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        assert_eq!(adam.step_count(), 0);
    }
}
