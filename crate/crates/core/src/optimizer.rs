//! AdamW with decoupled weight decay, restricted to an explicit trainable set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Completed update count, used for bias correction.
    pub t: u64,
    /// Keyed by parameter name so state survives a checkpoint round trip.
    pub moments: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, moments: BTreeMap::new() }
    }

    /// One update of every id in `trainable` that has a gradient. Parameters
    /// outside `trainable` are never read for writing, so they stay bit-identical.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<ParamId, Mat>, trainable: &[ParamId], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for &id in trainable {
            let Some(grad) = grads.get(&id) else { continue };
            let name = params.name(id).to_string();
            let p = params.get_mut(id);
            let st = self
                .moments
                .entry(name)
                .or_insert_with(|| Moments { m: vec![0.0; p.len()], v: vec![0.0; p.len()] });
            for (((w, &g), m), v) in p.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(&mut st.m).zip(&mut st.v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * self.weight_decay * *w;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Mat::from_rows(&[vec![1.0, -2.0]]));
        let b = store.insert("b", Mat::from_rows(&[vec![3.0]]));
        let mut grads = BTreeMap::new();
        grads.insert(a, Mat::from_rows(&[vec![0.5, -4.0]]));
        grads.insert(b, Mat::from_rows(&[vec![1.0]]));
        let mut opt = AdamW::new(0.0);
        opt.step(&mut store, &grads, &[a], 0.1);
        let got = store.get(a);
        assert!((got[(0, 0)] - 0.9).abs() < 1e-6);
        assert!((got[(0, 1)] + 1.9).abs() < 1e-6);
        assert_eq!(store.get(b)[(0, 0)].to_bits(), 3.0f64.to_bits());
    }

    #[test]
    fn decay_is_decoupled_from_the_gradient() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Mat::from_rows(&[vec![2.0]]));
        let mut grads = BTreeMap::new();
        grads.insert(a, Mat::from_rows(&[vec![0.0]]));
        let mut opt = AdamW::new(0.5);
        opt.step(&mut store, &grads, &[a], 0.1);
        assert!((store.get(a)[(0, 0)] - 1.9).abs() < 1e-12);
    }
}
