//! Adam and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::Archive;
use crate::nn::{ParamId, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over the trainable entries of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    ids: Vec<ParamId>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
        let zeros = |id: &ParamId| Tensor::zeros(store.value(*id).shape());
        Adam {
            config,
            step: 0,
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
        }
    }

    /// One update with the gradients currently in `store`.
    pub fn update(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for (k, &id) in self.ids.iter().enumerate() {
            let g = store.grad(id).data().to_vec();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let w = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                let gi = g[i].f64();
                let mi = beta1 * m[i].f64() + (1.0 - beta1) * gi;
                let vi = beta2 * v[i].f64() + (1.0 - beta2) * gi * gi;
                m[i] = T::lit(mi);
                v[i] = T::lit(vi);
                let upd = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                w[i] = T::lit(w[i].f64() - upd);
            }
        }
    }

    /// Moments into sections `adam_m` and `adam_v`, keyed by parameter name.
    pub fn save(&self, store: &ParamStore<T>, ar: &mut Archive) {
        for (k, &id) in self.ids.iter().enumerate() {
            ar.push("adam_m", store.name(id), &self.m[k]);
            ar.push("adam_v", store.name(id), &self.v[k]);
        }
    }

    pub fn load(&mut self, store: &ParamStore<T>, ar: &Archive, step: u64) -> Result<()> {
        for (k, &id) in self.ids.iter().enumerate() {
            for (section, dst) in [("adam_m", &mut self.m[k]), ("adam_v", &mut self.v[k])] {
                let t = ar
                    .get(section, store.name(id))
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{section}/{}`", store.name(id))))?;
                if t.shape() != dst.shape() {
                    return Err(Error::Checkpoint(format!("`{section}/{}` has shape {:?}", store.name(id), t.shape())));
                }
                *dst = t.cast();
            }
        }
        self.step = step;
        Ok(())
    }
}

/// Global L2 norm over the gradients of all trainable entries.
pub fn grad_norm<T: Real>(store: &ParamStore<T>) -> f64 {
    store
        .ids()
        .filter(|&id| store.is_trainable(id))
        .map(|id| store.grad(id).sum_squares())
        .sum::<f64>()
        .sqrt()
}

/// Rescale all gradients so their global norm is at most `max_norm`.
/// Returns the applied scale, 1 when the norm is already within bounds.
pub fn clip_gradients<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> Result<f64> {
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for &id in &ids {
        if !store.grad(id).is_finite() {
            return Err(Error::NonFiniteGradient(store.name(id).to_string()));
        }
    }
    let norm = grad_norm(store);
    if norm <= max_norm {
        return Ok(1.0);
    }
    let mut scale = 1.0;
    let mut factor = max_norm / norm;
    // rounding in low precision can leave the result a hair above the bound
    for _ in 0..16 {
        for &id in &ids {
            let f = T::lit(factor);
            store.grad_mut(id).data_mut().iter_mut().for_each(|g| *g = *g * f);
        }
        scale *= factor;
        let now = grad_norm(store);
        if now <= max_norm + 1e-9 {
            break;
        }
        factor = max_norm / now * (1.0 - 1e-7);
    }
    Ok(scale)
}
