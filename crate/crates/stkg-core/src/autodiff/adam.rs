use crate::error::{Error, Result};

use super::params::{Gradients, Param, ParamStore};

/// Adam with bias correction. Moment buffers are aligned with the parameter
/// store; `t` counts completed steps.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        let v = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    /// One update over every trainable parameter not excluded by `skip`.
    /// Parameters without a gradient on this step are treated as zero-gradient
    /// (their moments decay). A non-finite gradient aborts the whole step
    /// before any state is touched.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        skip: impl Fn(&Param) -> bool,
    ) -> Result<()> {
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.trainable && !skip(p))
            .map(|(id, _)| id)
            .collect();
        for &id in &ids {
            if let Some(g) = grads.get(id) {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for parameter {}",
                        store.param(id).name
                    )));
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for &id in &ids {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let value = store.value_mut(id);
            let g = grads.get(id);
            for i in 0..value.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
