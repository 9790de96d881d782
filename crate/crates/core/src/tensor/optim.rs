use std::collections::BTreeMap;

use super::{ParamGroup, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter, plus the step count.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

/// Adam with one learning rate per [`ParamGroup`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub learning_rates: BTreeMap<ParamGroup, f64>,
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(store: &ParamStore, lr_gat: f64, lr_other: f64) -> Self {
        let state = OptimizerState {
            step: 0,
            first_moment: store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect(),
            second_moment: store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect(),
        };
        Self {
            config: AdamConfig::default(),
            learning_rates: BTreeMap::from([(ParamGroup::Gat, lr_gat), (ParamGroup::Other, lr_other)]),
            state,
        }
    }

    pub fn learning_rate(&self, group: ParamGroup) -> f64 {
        self.learning_rates.get(&group).copied().unwrap_or(0.0)
    }

    /// Applies one bias-corrected update to every trainable tensor, then
    /// clears all gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, missing)) = store
            .iter()
            .find(|(_, p)| p.tensor.requires_grad() && p.tensor.grad().is_none())
        {
            return Err(Error::IncompleteBackward(missing.name.clone()));
        }
        self.state.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.tensor.requires_grad() {
                continue;
            }
            let lr = self.learning_rates.get(&p.group).copied().unwrap_or(0.0);
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let m = &mut self.state.first_moment[i];
            let v = &mut self.state.second_moment[i];
            for (k, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.clear_grads();
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let total: f64 = store
        .iter()
        .filter_map(|(_, p)| p.tensor.grad())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let factor = max_norm / total;
        for p in store.iter_mut() {
            if let Some(g) = p.tensor.grad_mut() {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(groups: &[(ParamGroup, f64)]) -> ParamStore {
        let mut store = ParamStore::new();
        for (i, (g, v)) in groups.iter().enumerate() {
            store.register(format!("p{i}"), *g, Tensor::row(&[*v]));
        }
        store
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(&[(ParamGroup::Other, 1.0)]);
        let mut adam = Adam::new(&store, 0.0, 0.1);
        store.zero_grads();
        store.iter_mut().next().unwrap().tensor.accumulate_grad(&[1.0]);
        adam.step(&mut store).unwrap();
        let after = store.by_name("p0").unwrap().tensor.data()[0];
        assert!((1.0 - after - 0.1).abs() < 1e-6, "moved by {}", 1.0 - after);
        assert!(store.by_name("p0").unwrap().tensor.grad().is_none());
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = scalar_store(&[(ParamGroup::Other, 0.7), (ParamGroup::Gat, -1.3)]);
        let before: Vec<f64> = store.iter().map(|(_, p)| p.tensor.data()[0]).collect();
        let mut adam = Adam::new(&store, 1e-5, 1e-4);
        for _ in 0..5 {
            store.zero_grads();
            adam.step(&mut store).unwrap();
        }
        let after: Vec<f64> = store.iter().map(|(_, p)| p.tensor.data()[0]).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn missing_gradient_is_reported() {
        let mut store = scalar_store(&[(ParamGroup::Other, 1.0)]);
        let mut adam = Adam::new(&store, 1e-5, 1e-4);
        match adam.step(&mut store).unwrap_err() {
            Error::IncompleteBackward(name) => assert_eq!(name, "p0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn group_rates_scale_step_sizes() {
        let mut store = scalar_store(&[(ParamGroup::Gat, 0.0), (ParamGroup::Other, 0.0)]);
        let mut adam = Adam::new(&store, 1e-5, 1e-4);
        store.zero_grads();
        for p in store.iter_mut() {
            p.tensor.accumulate_grad(&[0.3]);
        }
        adam.step(&mut store).unwrap();
        let gat = store.by_name("p0").unwrap().tensor.data()[0].abs();
        let other = store.by_name("p1").unwrap().tensor.data()[0].abs();
        let ratio = other / gat;
        assert!((ratio - 10.0).abs() < 1e-6, "ratio {ratio}");
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut store = scalar_store(&[(ParamGroup::Other, 0.0), (ParamGroup::Gat, 0.0)]);
        store.zero_grads();
        for p in store.iter_mut() {
            p.tensor.accumulate_grad(&[30.0]);
        }
        let before = clip_grad_norm(&mut store, 5.0);
        assert!((before - 30.0 * 2f64.sqrt()).abs() < 1e-12);
        let after: f64 = store
            .iter()
            .map(|(_, p)| p.tensor.grad().unwrap()[0].powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((after - 5.0).abs() < 1e-12);
    }
}
