use crate::error::{Error, Result};
use crate::numcore::params::{Grads, ParamStore};

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_lr(store, 1e-3)
    }

    pub fn with_lr(store: &ParamStore, lr: f64) -> Self {
        let zeros = |_| -> Vec<Vec<f64>> {
            store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place and advances the step counter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moment buffers",
                store.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for id in store.ids() {
            let n = store.get(id).len();
            if grads.get(id).len() != n || self.m[id.index()].len() != n {
                return Err(Error::Shape(format!(
                    "adam: size mismatch for `{}`",
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in store.ids() {
            let g = grads.get(id);
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
