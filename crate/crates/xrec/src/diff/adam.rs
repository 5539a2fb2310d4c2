use crate::diff::params::ParamStore;
use crate::diff::tape::ParamGrads;
use crate::error::{Result, XrecError};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// One bias-corrected Adam update over the whole store.
///
/// Parameters absent from `grads` are treated as having zero gradient:
/// their moments decay and, if the moments were already zero, their values
/// are unchanged. Rejects non-finite gradients before touching any state.
pub fn adam_step(store: &mut ParamStore, grads: &ParamGrads, cfg: &AdamConfig) -> Result<()> {
    for id in 0..store.len() {
        if let Some(g) = grads.get(id) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(XrecError::NonFiniteGradient { param: store.param(id).name.clone() });
            }
        }
    }
    let t = store.advance_step();
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for id in 0..store.len() {
        let zeros;
        let g: &[f64] = match grads.get(id) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; store.param(id).values.len()];
                &zeros
            }
        };
        let p = store.param_mut(id);
        for (i, &gi) in g.iter().enumerate() {
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            p.values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
