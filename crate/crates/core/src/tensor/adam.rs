use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DenseMatrix, Gradients, ParamStore};
use crate::error::{mismatch, Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<DenseMatrix>,
    pub second_moment: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: store.zeros_like(),
            second_moment: store.zeros_like(),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.apply(store, grads.params())
    }

    /// One Adam step on every parameter with the given per-parameter gradients.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[DenseMatrix]) -> Result<()> {
        if grads.len() != store.len() || self.first_moment.len() != store.len() {
            return Err(mismatch(
                "adam_step",
                format!("{} parameter tensors", store.len()),
                format!("{} gradients", grads.len()),
            ));
        }
        for (id, g) in store.ids().zip(grads) {
            let p = store.get(id);
            if p.shape() != g.shape() || self.first_moment[id.index()].shape() != p.shape() {
                return Err(mismatch(
                    "adam_step",
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite("adam_step gradient"));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as f64;
        let bias1 = 1.0 - libm::pow(beta1, t);
        let bias2 = 1.0 - libm::pow(beta2, t);

        for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let m = self.first_moment[id.index()].data_mut();
            let v = self.second_moment[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for (((pv, mv), vv), &gv) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= lr * m_hat / (math::sqrt(v_hat) + epsilon);
            }
        }
        Ok(())
    }
}
