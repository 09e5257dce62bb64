use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coefficient of the L2 term `wd·w` added to each gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam with an additive L2 penalty.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is indexed like the store; entries for
    /// buffers and unused parameters are skipped.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.m.resize(store.len(), None);
        self.v.resize(store.len(), None);
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = &grads[id.index()] else { continue };
            let w = store.get_mut(id);
            g.expect_shape(w.shape())?;
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (((wv, &gv), mv), vv) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gt = gv + weight_decay * *wv;
                *mv = beta1 * *mv + (1.0 - beta1) * gt;
                *vv = beta2 * *vv + (1.0 - beta2) * gt * gt;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *wv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(&[1], vec![w]).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        adam.step(&mut store, &[Some(Tensor::new(&[1], vec![1.0]).unwrap())]).unwrap();
        let w = store.get(store.find("w").unwrap()).data()[0];
        assert!((w - 0.9).abs() < 1e-6, "{w}");
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut store = scalar_store(0.3);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        });
        for _ in 0..5 {
            adam.step(&mut store, &[Some(Tensor::new(&[1], vec![2.0]).unwrap())]).unwrap();
        }
        assert_eq!(store.get(store.find("w").unwrap()).data()[0], 0.3);
    }

    #[test]
    fn weight_decay_shifts_gradient() {
        // with g = 0 the only signal is wd·w, whose sign sets the step direction
        let mut store = scalar_store(2.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.01,
            weight_decay: 1e-4,
            ..AdamConfig::default()
        });
        adam.step(&mut store, &[Some(Tensor::new(&[1], vec![0.0]).unwrap())]).unwrap();
        let w = store.get(store.find("w").unwrap()).data()[0];
        // m̂ = v̂^{1/2} = 2e-4 so the step is lr·2e-4/(2e-4 + ε)
        let expected = 2.0 - 0.01 * 2e-4 / (2e-4 + 1e-8);
        assert!((w - expected).abs() < 1e-12);
    }
}
